"""Successive convexification for minimum-time 6-DoF powered descent.

Each iteration linearizes the free-final-time dynamics about the previous
iterate, assembles one second-order cone subproblem and solves it with the
embedded first-order conic solver.  The subproblem minimizes

    sigma + w_nu ||nu||_1 + w_delta ||Delta||_2 + w_dsigma |delta sigma|

subject to boundary conditions, linearized dynamics with virtual control nu,
mass / thrust / gimbal constraints and soft quadratic trust regions (the
per-node radii Delta_k are decision variables, penalized in the cost, so no
hard accept/reject logic is needed).

The minimum-thrust bound is nonconvex; it enters through the standard
linearized lower bound  u_hat_k' u_k / ||u_hat_k|| >= T_min  about the
previous iterate's thrust direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import INFEASIBLE, NONNEG, OPTIMAL, SOC, ZERO, ConeProgram, solve_cone
from .dynamics import (
    LinearizedSegment,
    ProblemSpec,
    discretize,
    quat_normalize,
    quat_slerp,
)
from .trajmatrix import column_to_state_control, state_control_to_column


class ScvxError(RuntimeError):
    pass


@dataclass
class ScvxParams:
    """Algorithm weights and tolerances (soft-trust-region variant)."""

    w_nu: float = 1e5
    w_delta: float = 1e-3
    w_dsigma: float = 1e-1
    delta_init: float = 10.0
    sigma_min: float = 1e-2
    tol_feas: float = 1e-6
    tol_step: float = 1e-4
    max_iter: int = 15
    solver_tol_start: float = 1e-5
    solver_tol_final: float = 2e-8
    solver_max_iter: int = 30_000
    substeps: int = 10


@dataclass
class ScvxIterate:
    """One linearization point: state/control tables plus penalty weights."""

    X: np.ndarray  # 14 x K
    U: np.ndarray  # 3 x K
    sigma: float
    nu: np.ndarray | None = None
    Delta: np.ndarray | None = None
    Delta_sigma: float = 0.0
    w_nu: float = 1e5
    w_delta: float = 1e-3
    w_dsigma: float = 1e-1

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class ScvxReport:
    converged: bool
    iterations: int
    final_defect: float
    trajectory: np.ndarray  # 17 x K
    sigma_final: float
    step_norm: float = np.nan
    objective_history: list = field(default_factory=list)
    solver_iterations: int = 0


# =============================================================================
# Subproblem assembly
# =============================================================================


class _Layout:
    def __init__(self, K: int):
        self.K = K
        self.off_u = 14 * K
        self.off_sigma = 17 * K
        self.off_nu = self.off_sigma + 1
        self.off_tnu = self.off_nu + 14 * (K - 1)
        self.off_delta = self.off_tnu + 14 * (K - 1)
        self.off_tdelta = self.off_delta + K
        self.off_dsigma = self.off_tdelta + 1
        self.n = self.off_dsigma + 1

    def x(self, k, i):
        return 14 * k + i

    def u(self, k, j):
        return self.off_u + 3 * k + j

    def nu(self, k, i):
        return self.off_nu + 14 * k + i

    def tnu(self, k, i):
        return self.off_tnu + 14 * k + i


class _RowBuilder:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.b: list[float] = []
        self.cones: list[tuple[str, int]] = []
        self._row = 0

    def add_row(self, cols, vals, rhs):
        for c, v in zip(cols, vals):
            if v != 0.0:
                self.rows.append(self._row)
                self.cols.append(c)
                self.vals.append(float(v))
        self.b.append(float(rhs))
        self._row += 1

    def add_cone(self, kind, dim):
        self.cones.append((kind, dim))

    def build(self, n) -> tuple[sp.csc_matrix, np.ndarray]:
        A = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(self._row, n)).tocsc()
        return A, np.array(self.b)


def assemble_subproblem(
    iterate: ScvxIterate,
    segments: list[LinearizedSegment],
    spec: ProblemSpec,
    sigma_min: float = 1e-2,
) -> ConeProgram:
    """Encode one SCvx iteration as a cone program.

    Cone layout: one Zero block (dynamics + boundary rows), one NonNeg block
    (mass, min-thrust, absolute-value and dilation-trust rows), then K thrust
    SOCs, K gimbal SOCs, K quadratic trust-region SOCs and a single SOC for
    the norm of the trust-radius vector.
    """
    K = spec.K
    if iterate.X.shape != (14, K) or iterate.U.shape != (3, K):
        raise ValueError("iterate tables have the wrong shape")
    if len(segments) != K - 1:
        raise ValueError(f"expected {K - 1} segments, got {len(segments)}")

    lay = _Layout(K)
    rb = _RowBuilder()

    # ----- Zero cone: dynamics equalities with virtual control ------------
    for k, seg in enumerate(segments):
        for i in range(14):
            cols = [lay.x(k + 1, i)]
            vals = [1.0]
            cols += [lay.x(k, j) for j in range(14)]
            vals += list(-seg.A[i])
            cols += [lay.u(k, j) for j in range(3)]
            vals += list(-seg.B[i])
            cols += [lay.u(k + 1, j) for j in range(3)]
            vals += list(-seg.C[i])
            cols.append(lay.off_sigma)
            vals.append(-seg.Sigma[i])
            cols.append(lay.nu(k, i))
            vals.append(-1.0)
            rb.add_row(cols, vals, seg.z[i])

    # ----- Zero cone: boundary conditions ----------------------------------
    rb.add_row([lay.x(0, 0)], [1.0], spec.m_wet)
    for i in range(3):
        rb.add_row([lay.x(0, 1 + i)], [1.0], spec.r_I0[i])
    for i in range(3):
        rb.add_row([lay.x(0, 4 + i)], [1.0], spec.v_I0[i])
    for i in range(3):
        rb.add_row([lay.x(0, 11 + i)], [1.0], spec.w_0[i])
    for i in range(3):
        rb.add_row([lay.x(K - 1, 1 + i)], [1.0], 0.0)
    for i in range(3):
        rb.add_row([lay.x(K - 1, 4 + i)], [1.0], spec.v_If[i])
    for i in range(4):
        rb.add_row([lay.x(K - 1, 7 + i)], [1.0], spec.q_f[i])
    for i in range(3):
        rb.add_row([lay.x(K - 1, 11 + i)], [1.0], 0.0)
    rb.add_row([lay.u(K - 1, 1)], [1.0], 0.0)
    rb.add_row([lay.u(K - 1, 2)], [1.0], 0.0)
    rb.add_cone(ZERO, rb._row)

    # ----- NonNeg cone ------------------------------------------------------
    nonneg_start = rb._row
    for k in range(K):
        rb.add_row([lay.x(k, 0)], [-1.0], -spec.m_dry)
    for k in range(K):
        u_hat = iterate.U[:, k]
        norm = np.linalg.norm(u_hat)
        direction = u_hat / norm if norm > 1e-9 else np.array([1.0, 0.0, 0.0])
        rb.add_row([lay.u(k, j) for j in range(3)], list(-direction), -spec.T_min)
    for k in range(K - 1):
        for i in range(14):
            rb.add_row([lay.tnu(k, i), lay.nu(k, i)], [-1.0, -1.0], 0.0)
            rb.add_row([lay.tnu(k, i), lay.nu(k, i)], [-1.0, 1.0], 0.0)
    rb.add_row([lay.off_sigma, lay.off_dsigma], [1.0, -1.0], iterate.sigma)
    rb.add_row([lay.off_sigma, lay.off_dsigma], [-1.0, -1.0], -iterate.sigma)
    rb.add_row([lay.off_sigma], [-1.0], -sigma_min)
    rb.add_cone(NONNEG, rb._row - nonneg_start)

    # ----- SOC: thrust magnitude -------------------------------------------
    for k in range(K):
        rb.add_row([], [], spec.T_max)
        for j in range(3):
            rb.add_row([lay.u(k, j)], [-1.0], 0.0)
        rb.add_cone(SOC, 4)

    # ----- SOC: gimbal pointing  cos(delta_max) ||u|| <= e1.u --------------
    cd = spec.cos_delta_max
    for k in range(K):
        rb.add_row([lay.u(k, 0)], [-1.0], 0.0)
        for j in range(3):
            rb.add_row([lay.u(k, j)], [-cd], 0.0)
        rb.add_cone(SOC, 4)

    # ----- SOC: quadratic state/control trust regions ----------------------
    # ||z||^2 <= Delta encoded as ||(2z, Delta - 1)|| <= Delta + 1.
    for k in range(K):
        rb.add_row([lay.off_delta + k], [-1.0], 1.0)
        for i in range(14):
            rb.add_row([lay.x(k, i)], [-2.0], -2.0 * iterate.X[i, k])
        for j in range(3):
            rb.add_row([lay.u(k, j)], [-2.0], -2.0 * iterate.U[j, k])
        rb.add_row([lay.off_delta + k], [-1.0], -1.0)
        rb.add_cone(SOC, 19)

    # ----- SOC: norm of the trust-radius vector ----------------------------
    rb.add_row([lay.off_tdelta], [-1.0], 0.0)
    for k in range(K):
        rb.add_row([lay.off_delta + k], [-1.0], 0.0)
    rb.add_cone(SOC, K + 1)

    c = np.zeros(lay.n)
    c[lay.off_sigma] = 1.0
    c[lay.off_tnu : lay.off_tnu + 14 * (K - 1)] = iterate.w_nu
    c[lay.off_tdelta] = iterate.w_delta
    c[lay.off_dsigma] = iterate.w_dsigma

    A, b = rb.build(lay.n)
    return ConeProgram(c=c, A=A, b=b, cones=rb.cones)


def _extract(sol_x: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    lay = _Layout(K)
    X = sol_x[: 14 * K].reshape(K, 14).T.copy()
    U = sol_x[lay.off_u : lay.off_u + 3 * K].reshape(K, 3).T.copy()
    sigma = float(sol_x[lay.off_sigma])
    nu = sol_x[lay.off_nu : lay.off_nu + 14 * (K - 1)].reshape(K - 1, 14).T.copy()
    return X, U, sigma, nu


# =============================================================================
# Initialization
# =============================================================================


def straightline_init(spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray, float]:
    """Interpolated cold-start guess with per-node hover thrust."""
    K = spec.K
    X = np.zeros((14, K))
    U = np.zeros((3, K))
    m_end = max(spec.m_dry, 0.9 * spec.m_wet)
    q0 = quat_normalize(spec.q_0)
    qf = quat_normalize(spec.q_f)
    for k in range(K):
        lam = k / (K - 1)
        X[0, k] = (1 - lam) * spec.m_wet + lam * m_end
        X[1:4, k] = (1 - lam) * spec.r_I0
        X[4:7, k] = (1 - lam) * spec.v_I0 + lam * spec.v_If
        X[7:11, k] = quat_slerp(q0, qf, lam)
        X[11:14, k] = (1 - lam) * spec.w_0
        U[:, k] = -X[0, k] * spec.g_I
    return X, U, float(spec.t_f_guess)


def _traj_to_tables(guess: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a 17 x K trajectory matrix into state and control tables."""
    K = guess.shape[1]
    X = np.zeros((14, K))
    U = np.zeros((3, K))
    for k in range(K):
        x, u = column_to_state_control(guess[:, k])
        X[:, k] = x
        U[:, k] = u
    return X, U


def prepare_warmstart_tables(guess: np.ndarray, spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sanitize a sampled trajectory before it can seed the optimizer.

    The mass row is monotonized with a running minimum (generated samples
    sometimes gain mass, which the dynamics forbid), clamped into the
    physical range, and quaternion columns are renormalized.
    """
    X, U = _traj_to_tables(np.asarray(guess, dtype=np.float64))
    m = np.minimum.accumulate(X[0])
    X[0] = np.clip(m, spec.m_dry, spec.m_wet)
    for k in range(X.shape[1]):
        q = X[7:11, k]
        n = np.linalg.norm(q)
        X[7:11, k] = q / n if n > 1e-9 else np.array([1.0, 0.0, 0.0, 0.0])
    return X, U


# =============================================================================
# Main loop
# =============================================================================


def _tables_to_traj(X: np.ndarray, U: np.ndarray) -> np.ndarray:
    K = X.shape[1]
    traj = np.zeros((17, K))
    for k in range(K):
        traj[:, k] = state_control_to_column(X[:, k], U[:, k])
    return traj


def scvx_solve(
    spec: ProblemSpec,
    init: np.ndarray | None = None,
    params: ScvxParams | None = None,
) -> ScvxReport:
    """Iterate linearize / solve until the virtual control vanishes.

    Convergence requires max |nu| <= tol_feas and a relative step
    <= tol_step.  A subproblem reported infeasible aborts with ScvxError
    naming the iteration; hitting max_iter returns converged=False.
    """
    params = params or ScvxParams()
    if init is None:
        X, U, sigma = straightline_init(spec)
    else:
        X, U = prepare_warmstart_tables(init, spec)
        sigma = float(spec.t_f_guess)

    warm = None
    report_hist = []
    defect = np.inf
    step = np.inf
    total_solver_iters = 0
    iteration = 0

    for iteration in range(1, params.max_iter + 1):
        segments = discretize(X, U, sigma, spec, substeps=params.substeps)
        iterate = ScvxIterate(
            X=X, U=U, sigma=sigma,
            w_nu=params.w_nu, w_delta=params.w_delta, w_dsigma=params.w_dsigma,
        )
        prog = assemble_subproblem(iterate, segments, spec, sigma_min=params.sigma_min)
        tol = max(params.solver_tol_final, params.solver_tol_start * 0.1 ** (iteration - 1))
        sol = solve_cone(
            prog,
            tol=tol,
            max_iter=params.solver_max_iter,
            warm_start=warm,
        )
        if sol.status == INFEASIBLE:
            raise ScvxError(f"subproblem infeasible at iteration {iteration}")
        warm = (sol.x, sol.y, sol.s)
        total_solver_iters += sol.iterations

        X_new, U_new, sigma_new, nu = _extract(sol.x, spec.K)
        defect = float(np.max(np.abs(nu)))
        scale = max(1.0, np.max(np.abs(X_new)), np.max(np.abs(U_new)), abs(sigma_new))
        step = max(
            np.max(np.abs(X_new - X)),
            np.max(np.abs(U_new - U)),
            abs(sigma_new - sigma),
        ) / scale
        report_hist.append(float(sol.objective))

        X, U, sigma = X_new, U_new, sigma_new
        if defect <= params.tol_feas and step <= params.tol_step:
            return ScvxReport(
                converged=True,
                iterations=iteration,
                final_defect=defect,
                trajectory=_tables_to_traj(X, U),
                sigma_final=sigma,
                step_norm=step,
                objective_history=report_hist,
                solver_iterations=total_solver_iters,
            )

    return ScvxReport(
        converged=False,
        iterations=iteration,
        final_defect=defect,
        trajectory=_tables_to_traj(X, U),
        sigma_final=sigma,
        step_norm=step,
        objective_history=report_hist,
        solver_iterations=total_solver_iters,
    )


def warmstart(spec: ProblemSpec, guess: np.ndarray, params: ScvxParams | None = None) -> ScvxReport:
    """scvx_solve initialized from an unscaled 17 x K trajectory guess."""
    return scvx_solve(spec, init=np.asarray(guess, dtype=np.float64), params=params)


# =============================================================================
# Post-hoc feasibility audit
# =============================================================================


def audit_feasibility(traj: np.ndarray, spec: ProblemSpec) -> dict[str, float]:
    """Constraint violations of a 17 x K trajectory against its problem spec.

    Returns per-category maximum violations (0 means satisfied).  Used by the
    dataset pipeline and the acceptance suite to certify converged solutions.
    """
    X, U = _traj_to_tables(traj)
    K = X.shape[1]
    out = {}
    out["m0"] = abs(X[0, 0] - spec.m_wet)
    out["r0"] = float(np.max(np.abs(X[1:4, 0] - spec.r_I0)))
    out["v0"] = float(np.max(np.abs(X[4:7, 0] - spec.v_I0)))
    out["w0"] = float(np.max(np.abs(X[11:14, 0] - spec.w_0)))
    out["rK"] = float(np.max(np.abs(X[1:4, -1])))
    out["vK"] = float(np.max(np.abs(X[4:7, -1] - spec.v_If)))
    out["qK"] = float(np.max(np.abs(X[7:11, -1] - quat_normalize(spec.q_f))))
    out["wK"] = float(np.max(np.abs(X[11:14, -1])))
    out["uK_lateral"] = float(np.max(np.abs(U[1:3, -1])))
    norms = np.linalg.norm(U, axis=0)
    out["thrust_max"] = float(np.max(norms - spec.T_max))
    out["thrust_min"] = float(np.max(spec.T_min - norms))
    out["gimbal"] = float(np.max(spec.cos_delta_max * norms - U[0]))
    out["mass_min"] = float(np.max(spec.m_dry - X[0]))
    for key in ("thrust_max", "thrust_min", "gimbal", "mass_min"):
        out[key] = max(out[key], 0.0)
    return out


def max_violation(traj: np.ndarray, spec: ProblemSpec) -> float:
    return max(audit_feasibility(traj, spec).values())
