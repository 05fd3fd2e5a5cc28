"""Six-degree-of-freedom powered-descent dynamics.

State vector (dimension 14, nondimensional):

    x = [m, r_I(3), v_I(3), q_BI(4), w_B(3)]

with q_BI the scalar-first body-from-inertial unit quaternion and w_B the
body angular rate.  The inertial frame is up-axis first: gravity points along
-e1, so component 0 of r/v is altitude / vertical speed.

Continuous dynamics (single gimbaled engine, rigid body, flat planet):

    m'   = -alpha_mdot * ||T_B||
    r'   = v
    v'   = C_IB(q) T_B / m + g_I
    q'   = 1/2 * Omega(w) q
    J w' = r_TB x T_B - w x (J w)

The free-final-time discretization works on normalized time tau in [0, 1]
with dilation sigma (physical flight time), i.e. dx/dtau = sigma * f(x, u),
first-order-hold control between nodes, and a fixed-step RK4 integrator so
every result is deterministic and the convergence order is testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# =============================================================================
# Quaternion utilities (scalar-first, q_BI maps inertial -> body)
# =============================================================================


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or nonfinite quaternion")
    return q / n


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """Direction cosine matrix C_BI with v_B = C_BI @ v_I."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)],
            [2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)],
            [2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _dcm_partials(q: np.ndarray) -> list[np.ndarray]:
    """d C_BI / d q_i for i in (w, x, y, z)."""
    w, x, y, z = q
    dw = 2 * np.array([[0, z, -y], [-z, 0, x], [y, -x, 0]], dtype=float)
    dx = 2 * np.array([[0, y, z], [y, -2 * x, w], [z, -w, -2 * x]], dtype=float)
    dy = 2 * np.array([[-2 * y, x, -w], [x, 0, z], [w, z, -2 * y]], dtype=float)
    dz = 2 * np.array([[-2 * z, w, x], [-w, -2 * z, y], [x, y, 0]], dtype=float)
    return [dw, dx, dy, dz]


def omega_matrix(w: np.ndarray) -> np.ndarray:
    """Standard 4x4 skew form with q' = 1/2 Omega(w) q."""
    wx, wy, wz = w
    return np.array(
        [
            [0.0, -wx, -wy, -wz],
            [wx, 0.0, wz, -wy],
            [wy, -wz, 0.0, wx],
            [wz, wy, -wx, 0.0],
        ]
    )


def _dquatdot_domega(q: np.ndarray) -> np.ndarray:
    """d(1/2 Omega(w) q)/dw, a 4x3 matrix linear in q."""
    w, x, y, z = q
    return 0.5 * np.array(
        [
            [-x, -y, -z],
            [w, -z, y],
            [z, w, -x],
            [-y, x, w],
        ]
    )


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def euler_zyx_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX-intrinsic Euler angles (radians) to a scalar-first quaternion."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def quat_slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions (shortest arc)."""
    q0 = quat_normalize(np.asarray(q0, dtype=float))
    q1 = quat_normalize(np.asarray(q1, dtype=float))
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1, d = -q1, -d
    if d > 1.0 - 1e-12:
        return quat_normalize(q0 + t * (q1 - q0))
    theta = np.arccos(np.clip(d, -1.0, 1.0))
    return (np.sin((1 - t) * theta) * q0 + np.sin(t * theta) * q1) / np.sin(theta)


# =============================================================================
# Problem definition
# =============================================================================


@dataclass
class ProblemSpec:
    """All parameters and boundary conditions of one descent problem."""

    g_I: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    alpha_mdot: float = 0.01
    r_TB: np.ndarray = field(default_factory=lambda: np.array([-0.01, 0.0, 0.0]))
    J_B: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    K: int = 20
    t_f_guess: float = 3.0
    m_wet: float = 2.0
    m_dry: float = 1.0
    T_min: float = 0.3
    T_max: float = 5.0
    delta_max_deg: float = 20.0
    r_I0: np.ndarray = field(default_factory=lambda: np.array([2.0, 0.5, 0.5]))
    v_I0: np.ndarray = field(default_factory=lambda: np.array([-0.7, -0.3, -0.3]))
    q_0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    w_0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_If: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_f: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        for name in ("g_I", "r_TB", "J_B", "r_I0", "v_I0", "q_0", "w_0", "v_If", "q_f"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (0.0 < self.T_min < self.T_max):
            raise ValueError("need 0 < T_min < T_max")
        if not self.m_dry < self.m_wet:
            raise ValueError("need m_dry < m_wet")
        if self.K < 2:
            raise ValueError("need at least two discretization nodes")
        if not np.allclose(self.J_B, self.J_B.T):
            raise ValueError("inertia tensor must be symmetric")
        if np.any(np.linalg.eigvalsh(self.J_B) <= 0):
            raise ValueError("inertia tensor must be positive definite")
        self._J_inv = np.linalg.inv(self.J_B)

    @property
    def J_inv(self) -> np.ndarray:
        return self._J_inv

    @property
    def cos_delta_max(self) -> float:
        return float(np.cos(np.deg2rad(self.delta_max_deg)))

    def to_dict(self) -> dict:
        out = {}
        for name, value in self.__dict__.items():
            if name.startswith("_"):
                continue
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        return cls(**data)


@dataclass
class LinearizedSegment:
    """First-order-hold linearization of one discretization interval.

    At the linearization point the affine map reproduces the nonlinear flow:
    A @ x_k + B @ u_k + C @ u_{k+1} + Sigma * sigma + z equals the RK4
    endpoint up to integration tolerance.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    z: np.ndarray


@dataclass
class DragParams:
    """3-DoF drag rollout parameters: PD controller toward a target state."""

    C_d: float = 0.1
    K_p: float = 5.0
    K_d: float = 2.0
    dt: float = 3.0 / 19.0
    g_I: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    r_target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m_fill: float = 2.0

    def __post_init__(self):
        for name in ("g_I", "r_target", "v_target"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.C_d < 0:
            raise ValueError("drag coefficient must be nonnegative")
        if self.dt <= 0:
            raise ValueError("step size must be positive")


# =============================================================================
# Continuous dynamics and Jacobians
# =============================================================================


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("nonfinite value in dynamics input")


def deriv_6dof(x: np.ndarray, u: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Continuous state derivative f(x, u)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_finite(x, u)
    m = x[0]
    if m <= 0.0:
        raise ValueError(f"nonphysical mass {m}")
    v = x[4:7]
    q = x[7:11]
    w = x[11:14]

    C_BI = quat_to_dcm(q)
    thrust_mag = np.linalg.norm(u)

    dx = np.empty(14)
    dx[0] = -spec.alpha_mdot * thrust_mag
    dx[1:4] = v
    dx[4:7] = C_BI.T @ u / m + spec.g_I
    dx[7:11] = 0.5 * omega_matrix(w) @ q
    dx[11:14] = spec.J_inv @ (np.cross(spec.r_TB, u) - np.cross(w, spec.J_B @ w))
    return dx


def jacobians_6dof(x: np.ndarray, u: np.ndarray, spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (df/dx, df/du) of :func:`deriv_6dof`.

    The mass-rate row uses the subgradient 0 at exactly zero thrust.
    """
    m = x[0]
    q = x[7:11]
    w = x[11:14]
    C_BI = quat_to_dcm(q)
    C_IB = C_BI.T

    fx = np.zeros((14, 14))
    fu = np.zeros((14, 3))

    # r' = v
    fx[1:4, 4:7] = np.eye(3)

    # v' = C_IB u / m + g
    fx[4:7, 0] = -C_IB @ u / m**2
    for j, dC in enumerate(_dcm_partials(q)):
        fx[4:7, 7 + j] = dC.T @ u / m
    fu[4:7, :] = C_IB / m

    # q' = 1/2 Omega(w) q
    fx[7:11, 7:11] = 0.5 * omega_matrix(w)
    fx[7:11, 11:14] = _dquatdot_domega(q)

    # J w' = r_TB x u - w x J w
    fx[11:14, 11:14] = spec.J_inv @ (skew(spec.J_B @ w) - skew(w) @ spec.J_B)
    fu[11:14, :] = spec.J_inv @ skew(spec.r_TB)

    # m' = -alpha ||u||
    thrust_mag = np.linalg.norm(u)
    if thrust_mag > 1e-12:
        fu[0, :] = -spec.alpha_mdot * u / thrust_mag

    return fx, fu


# =============================================================================
# Propagation (fixed-step RK4, first-order-hold control)
# =============================================================================

SUBSTEPS_PER_INTERVAL = 10


def propagate(
    x0: np.ndarray,
    u_start: np.ndarray,
    u_end: np.ndarray,
    dt: float,
    spec: ProblemSpec,
    substeps: int = SUBSTEPS_PER_INTERVAL,
) -> np.ndarray:
    """Flow the state over dt with linearly interpolated control.

    The quaternion is renormalized once at the end of the interval; the raw
    RK4 drift is O(h^4) per step so the correction is tiny.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=np.float64).copy()
    u0 = np.asarray(u_start, dtype=np.float64)
    u1 = np.asarray(u_end, dtype=np.float64)
    _check_finite(x, u0, u1)

    h = dt / substeps
    for i in range(substeps):
        t0 = i * h

        def u_of(t):
            lam = t / dt
            return (1.0 - lam) * u0 + lam * u1

        try:
            k1 = deriv_6dof(x, u_of(t0), spec)
            k2 = deriv_6dof(x + 0.5 * h * k1, u_of(t0 + 0.5 * h), spec)
            k3 = deriv_6dof(x + 0.5 * h * k2, u_of(t0 + 0.5 * h), spec)
            k4 = deriv_6dof(x + h * k3, u_of(t0 + h), spec)
        except ValueError as exc:
            raise RuntimeError(f"propagation failed at substep {i}: {exc}") from exc
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if x[0] <= 0.0:
            raise RuntimeError(f"propagation failed at substep {i}: mass depleted")

    x[7:11] = quat_normalize(x[7:11])
    return x


# =============================================================================
# Free-final-time discretization for successive convexification
# =============================================================================


def discretize(
    traj: np.ndarray,
    controls: np.ndarray,
    sigma: float,
    spec: ProblemSpec,
    substeps: int = SUBSTEPS_PER_INTERVAL,
) -> list[LinearizedSegment]:
    """Linearize dx/dtau = sigma f(x, u) about a reference trajectory.

    Parameters
    ----------
    traj : (14, K) reference states at the nodes.
    controls : (3, K) reference controls at the nodes.
    sigma : reference time dilation (> 0).

    Returns K-1 segments.  The state-transition matrix and the control /
    dilation / defect sensitivities are integrated jointly with the
    nonlinear flow by the same RK4 scheme, premultiplied by the inverse
    transition matrix so each segment needs a single final matrix product.
    """
    traj = np.asarray(traj, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    K = traj.shape[1]
    dtau = 1.0 / (K - 1)
    segments = []

    # The sensitivity matrices are integrated directly (no inverse-transition
    # trick): every block obeys a linear ODE with the same coefficient matrix
    # sigma*fx evaluated on the reference flow, so the affine prediction
    # A x_k + B u_k + C u_{k+1} + Sigma sigma + z reproduces the RK4 flow
    # endpoint to rounding precision by construction.
    #   columns of M: [Phi (14) | B (3) | C (3) | Sigma (1) | z (1)]
    for k in range(K - 1):
        uk, uk1 = controls[:, k], controls[:, k + 1]

        x = traj[:, k].copy()
        M = np.zeros((14, 22))
        M[:, :14] = np.eye(14)

        h = dtau / substeps

        def rates(x_, M_, tau_local):
            lam = tau_local / dtau
            u = (1.0 - lam) * uk + lam * uk1
            f = deriv_6dof(x_, u, spec)
            fx, fu = jacobians_6dof(x_, u, spec)
            dM = (sigma * fx) @ M_
            dM[:, 14:17] += sigma * fu * (1.0 - lam)
            dM[:, 17:20] += sigma * fu * lam
            dM[:, 20] += f
            dM[:, 21] += -sigma * (fx @ x_) - sigma * (fu @ u)
            return sigma * f, dM

        for i in range(substeps):
            t_loc = i * h
            kx1, kM1 = rates(x, M, t_loc)
            kx2, kM2 = rates(x + 0.5 * h * kx1, M + 0.5 * h * kM1, t_loc + 0.5 * h)
            kx3, kM3 = rates(x + 0.5 * h * kx2, M + 0.5 * h * kM2, t_loc + 0.5 * h)
            kx4, kM4 = rates(x + h * kx3, M + h * kM3, t_loc + h)
            x = x + (h / 6.0) * (kx1 + 2 * kx2 + 2 * kx3 + kx4)
            M = M + (h / 6.0) * (kM1 + 2 * kM2 + 2 * kM3 + kM4)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e9:
                raise RuntimeError(f"linearization diverged on segment {k}")

        segments.append(
            LinearizedSegment(
                A=M[:, :14].copy(),
                B=M[:, 14:17].copy(),
                C=M[:, 17:20].copy(),
                Sigma=M[:, 20].copy(),
                z=M[:, 21].copy(),
            )
        )

    return segments


# =============================================================================
# 3-DoF drag rollout (explicit Euler, PD thrust)
# =============================================================================


def rollout_drag_pd(params: DragParams, r0: np.ndarray, v0: np.ndarray, steps: int = 20) -> np.ndarray:
    """Explicit-Euler rollout of the quadratic-drag point-mass model.

    Produces a full 17 x steps trajectory matrix so the result composes with
    the 6-DoF model: quaternion rows hold the identity attitude, angular
    rate rows are zero and the mass row is the constant fill value.  Those
    channels are masked out of any composed score, so the filler never
    influences sampling.
    """
    r = np.asarray(r0, dtype=np.float64).copy()
    v = np.asarray(v0, dtype=np.float64).copy()
    _check_finite(r, v)

    traj = np.zeros((17, steps))
    traj[6, :] = 1.0  # identity quaternion, scalar part
    traj[13, :] = params.m_fill

    for k in range(steps):
        thrust = params.K_p * (params.r_target - r) + params.K_d * (params.v_target - v)
        traj[0:3, k] = r
        traj[3:6, k] = v
        traj[14:17, k] = thrust
        if k < steps - 1:
            v = v + (params.g_I + thrust - params.C_d * np.linalg.norm(v) * v) * params.dt
            r = r + v * params.dt
    return traj
