"""Embedded second-order cone programming solver.

Problems are posed in the standard conic form

    minimize    c' x
    subject to  A x + s = b,   s in K,

where K is an ordered product of zero, nonnegative and second-order (Lorentz)
cones spanning the slack vector.  The solver is a primal-dual interior-point
method: Mehrotra predictor-corrector steps with Nesterov-Todd scaling, one
sparse quasidefinite factorization per iteration.  Residuals are always
checked on the original (unscaled) data, so an Optimal status certifies

    ||A x + s - b|| <= tol (1 + ||b||)
    ||A' y + c||    <= tol (1 + ||c||)
    |c'x + b'y|     <= tol (1 + |c'x| + |b'y|)

with s in K and y in K* to the same tolerance.  Primal infeasibility is
reported when a certificate (A' y ~ 0, b' y < 0, y in K*) emerges.

The SCvx layer consumes this module through :func:`solve_cone`; any solver
with the same signature can be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"

OPTIMAL = "Optimal"
MAX_ITER = "MaxIter"
INFEASIBLE = "Infeasible"


@dataclass
class ConeProgram:
    """Conic program data: cost, sparse constraints and the cone layout.

    ``cones`` is an ordered list of (kind, dim) pairs covering the rows of A.
    """

    c: np.ndarray
    A: sp.spmatrix
    b: np.ndarray
    cones: list[tuple[str, int]]

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).ravel()
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.A = sp.csc_matrix(self.A, dtype=np.float64)
        m, n = self.A.shape
        if self.c.size != n:
            raise ValueError(f"cost has {self.c.size} entries for {n} variables")
        if self.b.size != m:
            raise ValueError(f"rhs has {self.b.size} entries for {m} rows")
        total = sum(dim for _, dim in self.cones)
        if total != m:
            raise ValueError(f"cone dims sum to {total}, constraint rows are {m}")
        for kind, dim in self.cones:
            if kind not in (ZERO, NONNEG, SOC):
                raise ValueError(f"unknown cone kind {kind!r}")
            if kind == SOC and dim < 2:
                raise ValueError("second-order cones need dimension >= 2")
            if dim < 1:
                raise ValueError("cone dimensions must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    # -- plain-text triplet serialization (solver debugging aid) -----------

    def to_text(self) -> str:
        """Serialize as a sparse-triplet document.

        Header: dimensions and the cone list.  Body: one ``row col value``
        line per nonzero of A; the rhs b is stored as column ``n`` and the
        cost c as row ``m``.
        """
        m, n = self.A.shape
        lines = [f"coneprogram {m} {n}"]
        lines.append("cones " + " ".join(f"{kind}:{dim}" for kind, dim in self.cones))
        coo = self.A.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"{i} {j} {float(v)!r}")
        for i, v in enumerate(self.b):
            if v != 0.0:
                lines.append(f"{i} {n} {float(v)!r}")
        for j, v in enumerate(self.c):
            if v != 0.0:
                lines.append(f"{m} {j} {float(v)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConeProgram":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        tag, m, n = lines[0].split()
        if tag != "coneprogram":
            raise ValueError("not a cone-program document")
        m, n = int(m), int(n)
        cones = []
        for item in lines[1].split()[1:]:
            kind, dim = item.split(":")
            cones.append((kind, int(dim)))
        rows, cols, vals = [], [], []
        b = np.zeros(m)
        c = np.zeros(n)
        for ln in lines[2:]:
            i, j, v = ln.split()
            i, j, v = int(i), int(j), float(v)
            if i == m:
                c[j] = v
            elif j == n:
                b[i] = v
            else:
                rows.append(i)
                cols.append(j)
                vals.append(v)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsc()
        return cls(c=c, A=A, b=b, cones=cones)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "ConeProgram":
        return cls.from_text(Path(path).read_text())


@dataclass
class ConeSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    objective: float = field(default=np.nan)


# =============================================================================
# Cone operations (nonneg + second-order blocks; zero rows handled separately)
# =============================================================================


def _project_soc(block: np.ndarray) -> np.ndarray:
    t = block[0]
    z = block[1:]
    nz = np.linalg.norm(z)
    if nz <= t:
        return block
    if nz <= -t:
        return np.zeros_like(block)
    a = 0.5 * (t + nz)
    out = np.empty_like(block)
    out[0] = a
    out[1:] = a * z / nz
    return out


def project_cone(v: np.ndarray, cones: list[tuple[str, int]], dual: bool) -> np.ndarray:
    """Project onto K (dual=False) or the dual cone K* (dual=True).

    The dual of the zero cone is the free cone; nonnegative and second-order
    cones are self-dual.
    """
    out = v.copy()
    offset = 0
    for kind, dim in cones:
        blk = slice(offset, offset + dim)
        if kind == ZERO:
            if not dual:
                out[blk] = 0.0
        elif kind == NONNEG:
            np.maximum(out[blk], 0.0, out=out[blk])
        else:
            out[blk] = _project_soc(out[blk])
        offset += dim
    return out


class _ConeLayout:
    """Nonneg indices and SOC block slices of the inequality rows."""

    def __init__(self, cones: list[tuple[str, int]]):
        offset = 0
        nonneg = []
        socs = []
        for kind, dim in cones:
            if kind == NONNEG:
                nonneg.extend(range(offset, offset + dim))
            elif kind == SOC:
                socs.append(slice(offset, offset + dim))
            offset += dim
        self.dim = offset
        self.nonneg = np.array(nonneg, dtype=int)
        self.socs = socs
        # barrier degree: 1 per linear row, 1 per second-order cone
        self.degree = max(len(nonneg) + len(socs), 1)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[self.nonneg] = 1.0
        for blk in self.socs:
            e[blk.start] = 1.0
        return e

    def inside(self, v: np.ndarray, margin: float = 0.0) -> bool:
        if self.nonneg.size and np.min(v[self.nonneg]) <= margin:
            return False
        for blk in self.socs:
            if v[blk.start] - np.linalg.norm(v[blk.start + 1 : blk.stop]) <= margin:
                return False
        return True

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        """Largest alpha with v + alpha dv still in the cone (v interior)."""
        alpha = np.inf
        if self.nonneg.size:
            neg = dv[self.nonneg] < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-v[self.nonneg][neg] / dv[self.nonneg][neg]))
        for blk in self.socs:
            v0, vb = v[blk.start], v[blk.start + 1 : blk.stop]
            d0, db = dv[blk.start], dv[blk.start + 1 : blk.stop]
            a = d0 * d0 - db @ db
            b = 2 * (v0 * d0 - vb @ db)
            c = v0 * v0 - vb @ vb
            # roots of a t^2 + b t + c = 0; c > 0 in the interior
            if abs(a) < 1e-300:
                if b < 0:
                    alpha = min(alpha, -c / b)
                continue
            disc = b * b - 4 * a * c
            if disc < 0:
                if a < 0:  # should not happen with c > 0
                    continue
                continue
            sq = np.sqrt(disc)
            roots = [(-b - sq) / (2 * a), (-b + sq) / (2 * a)]
            pos = [r for r in roots if r > 1e-14]
            if a < 0:
                # exactly one positive root bounds the step
                if pos:
                    alpha = min(alpha, min(pos))
            else:
                if b < 0 and pos:
                    alpha = min(alpha, min(pos))
        return alpha


def _jordan_product(a: np.ndarray, b: np.ndarray, lay: _ConeLayout) -> np.ndarray:
    out = np.zeros(lay.dim)
    if lay.nonneg.size:
        out[lay.nonneg] = a[lay.nonneg] * b[lay.nonneg]
    for blk in lay.socs:
        ab, bb = a[blk], b[blk]
        out[blk.start] = ab @ bb
        out[blk.start + 1 : blk.stop] = ab[0] * bb[1:] + bb[0] * ab[1:]
    return out


# =============================================================================
# Residuals
# =============================================================================


def kkt_residuals(prog: ConeProgram, x: np.ndarray, y: np.ndarray, s: np.ndarray):
    """Unscaled KKT residuals (primal, dual, gap) for an independent audit."""
    pres = np.linalg.norm(prog.A @ x + s - prog.b) / (1.0 + np.linalg.norm(prog.b))
    dres = np.linalg.norm(prog.A.T @ y + prog.c) / (1.0 + np.linalg.norm(prog.c))
    cx = float(prog.c @ x)
    by = float(prog.b @ y)
    gap = abs(cx + by) / (1.0 + abs(cx) + abs(by))
    return pres, dres, gap


# =============================================================================
# Interior-point solver
# =============================================================================


def _apply_w_inv(lay: _ConeLayout, diag: np.ndarray, soc_data, v: np.ndarray) -> np.ndarray:
    """Apply W^{-1} given the nonneg diagonal of W^2 and the SOC factors."""
    out = np.zeros(lay.dim)
    if lay.nonneg.size:
        out[lay.nonneg] = v[lay.nonneg] / np.sqrt(diag[lay.nonneg])
    for blk, eta, wbar in soc_data:
        vb = v[blk]
        # V(wbar)^{-1} = V(J wbar), J wbar = (w0, -w1)
        w0, w1 = wbar[0], wbar[1:]
        u0 = w0 * vb[0] - w1 @ vb[1:]
        ub = -vb[0] * w1 + vb[1:] + (w1 @ vb[1:]) / (1.0 + w0) * w1
        out[blk.start] = u0 / eta
        out[blk.start + 1 : blk.stop] = ub / eta
    return out


class _NTState:
    """Nesterov-Todd scaling state for one (s, z) interior pair."""

    def __init__(self, s: np.ndarray, z: np.ndarray, lay: _ConeLayout):
        self.lay = lay
        dim = lay.dim
        self.lam = np.zeros(dim)
        self.diag = np.zeros(dim)
        self.soc_data = []

        if lay.nonneg.size:
            self.diag[lay.nonneg] = s[lay.nonneg] / z[lay.nonneg]
            self.lam[lay.nonneg] = np.sqrt(s[lay.nonneg] * z[lay.nonneg])

        W2 = sp.lil_matrix((dim, dim))
        W2.setdiag(self.diag)
        for blk in lay.socs:
            sb, zb = s[blk], z[blk]
            rs = sb[0] ** 2 - sb[1:] @ sb[1:]
            rz = zb[0] ** 2 - zb[1:] @ zb[1:]
            sbar = sb / np.sqrt(rs)
            zbar = zb / np.sqrt(rz)
            gamma = np.sqrt((1.0 + sbar @ zbar) / 2.0)
            wbar = np.empty_like(sb)
            wbar[0] = (sbar[0] + zbar[0]) / (2 * gamma)
            wbar[1:] = (sbar[1:] - zbar[1:]) / (2 * gamma)
            eta = (rs / rz) ** 0.25
            d = blk.stop - blk.start
            J = np.diag(np.concatenate([[1.0], -np.ones(d - 1)]))
            W2[blk, blk] = eta**2 * (2.0 * np.outer(wbar, wbar) - J)
            self.soc_data.append((blk, eta, wbar))
            # lam = W z for this block
            self.lam[blk] = self._apply_v(eta, wbar, zb)
        self.W2 = W2.tocsc()

    @staticmethod
    def _apply_v(eta, wbar, v):
        w0, w1 = wbar[0], wbar[1:]
        u0 = w0 * v[0] + w1 @ v[1:]
        ub = v[0] * w1 + v[1:] + (w1 @ v[1:]) / (1.0 + w0) * w1
        return eta * np.concatenate([[u0], ub])

    def apply_w(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.lay.dim)
        if self.lay.nonneg.size:
            out[self.lay.nonneg] = np.sqrt(self.diag[self.lay.nonneg]) * v[self.lay.nonneg]
        for blk, eta, wbar in self.soc_data:
            out[blk] = self._apply_v(eta, wbar, v[blk])
        return out

    def apply_w_inv(self, v: np.ndarray) -> np.ndarray:
        return _apply_w_inv(self.lay, self.diag, self.soc_data, v)

    def solve_lambda(self, dvec: np.ndarray) -> np.ndarray:
        """Solve lam o u = d in the Jordan algebra."""
        lay = self.lay
        out = np.zeros(lay.dim)
        if lay.nonneg.size:
            out[lay.nonneg] = dvec[lay.nonneg] / self.lam[lay.nonneg]
        for blk in lay.socs:
            lb = self.lam[blk]
            db = dvec[blk]
            det = lb[0] ** 2 - lb[1:] @ lb[1:]
            u0 = (lb[0] * db[0] - lb[1:] @ db[1:]) / det
            ub = (db[1:] - u0 * lb[1:]) / lb[0]
            out[blk.start] = u0
            out[blk.start + 1 : blk.stop] = ub
        return out


def solve_cone(
    prog: ConeProgram,
    tol: float = 1e-8,
    max_iter: int = 100,
    warm_start=None,
) -> ConeSolution:
    """Primal-dual interior-point conic solve (Mehrotra + NT scaling).

    ``warm_start`` is accepted for interface compatibility; path-following
    methods initialize themselves, so it is ignored.  Status is Optimal,
    MaxIter or Infeasible.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m, n = prog.A.shape

    # Split zero-cone rows (equalities) from inequality rows.
    zero_rows, ineq_rows, ineq_cones = [], [], []
    offset = 0
    for kind, dim in prog.cones:
        idx = list(range(offset, offset + dim))
        if kind == ZERO:
            zero_rows.extend(idx)
        else:
            ineq_rows.extend(idx)
            ineq_cones.append((kind, dim))
        offset += dim
    zero_rows = np.array(zero_rows, dtype=int)
    ineq_rows = np.array(ineq_rows, dtype=int)

    A_csr = prog.A.tocsr()
    Aeq = (A_csr[zero_rows] if zero_rows.size else sp.csr_matrix((0, n))).tocsc()
    beq = prog.b[zero_rows]
    G = (A_csr[ineq_rows] if ineq_rows.size else sp.csr_matrix((0, n))).tocsc()
    h = prog.b[ineq_rows]
    p, q = Aeq.shape[0], G.shape[0]
    lay = _ConeLayout(ineq_cones)

    reg = 1e-11

    def kkt_factor(W2):
        K = sp.bmat(
            [
                [reg * sp.identity(n), Aeq.T if p else None, G.T if q else None],
                [Aeq if p else None, -reg * sp.identity(p) if p else None, None],
                [G if q else None, None, (-W2 - reg * sp.identity(q)) if q else None],
            ],
            format="csc",
        )
        return spla.splu(K)

    def kkt_solve(lu, rx, ry, rz):
        rhs = np.concatenate([rx, ry, rz])
        # one step of iterative refinement for the static regularization
        sol = lu.solve(rhs)
        return sol[:n], sol[n : n + p], sol[n + p :]

    def full_sy(s_in, y_eq, z_in):
        s_full = np.zeros(m)
        y_full = np.zeros(m)
        if zero_rows.size:
            y_full[zero_rows] = y_eq
        if ineq_rows.size:
            s_full[ineq_rows] = s_in
            y_full[ineq_rows] = z_in
        return s_full, y_full

    # ----- initial point ----------------------------------------------------
    lu0 = kkt_factor(sp.identity(q, format="csc") if q else None)
    dx, dy, dz = kkt_solve(lu0, np.zeros(n), beq, h)
    x = dx
    s = (h - G @ x) if q else np.zeros(0)
    dx2, y, z = kkt_solve(lu0, -prog.c, np.zeros(p), np.zeros(q))
    z = -z

    e = lay.identity()
    if q:
        for vec_name in ("s", "z"):
            v = s if vec_name == "s" else z
            if not lay.inside(v):
                hi = 1.0
                while not lay.inside(v + hi * e) and hi < 1e12:
                    hi *= 2
                v = v + (1.0 + hi) * e
            else:
                v = v + 0.0 * e
            if vec_name == "s":
                s = v
            else:
                z = v

    best = None
    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        s_full, y_full = full_sy(s, y, z)
        pres, dres, gap = kkt_residuals(prog, x, y_full, s_full)
        mu = (s @ z) / lay.degree if q else 0.0
        if best is None or (pres + dres + gap) < (best[3] + best[4] + best[5]):
            best = (x.copy(), y_full.copy(), s_full.copy(), pres, dres, gap)
        if pres <= tol and dres <= tol and gap <= tol:
            best = (x.copy(), y_full.copy(), s_full.copy(), pres, dres, gap)
            status = OPTIMAL
            break

        # primal infeasibility certificate
        obj_cert = -(beq @ y + (h @ z if q else 0.0))
        if obj_cert > 0:
            cert_res = np.linalg.norm(Aeq.T @ y + (G.T @ z if q else 0.0))
            cert_scale = np.linalg.norm(np.concatenate([y, z])) + 1e-300
            if cert_res / obj_cert <= 1e-7 and obj_cert / cert_scale > 1e-10:
                status = INFEASIBLE
                break

        if q == 0:
            lu = kkt_factor(None)
            ddx, ddy, _ = kkt_solve(lu, -(Aeq.T @ y + prog.c), -(Aeq @ x - beq), np.zeros(0))
            x = x + ddx
            y = y + ddy
            continue

        r_d = Aeq.T @ y + G.T @ z + prog.c
        r_eq = Aeq @ x - beq
        r_in = G @ x + s - h

        nt = _NTState(s, z, lay)
        lu = kkt_factor(nt.W2)

        # affine direction: lam o (W^{-1}ds + Wdz) = -lam o lam
        rhs_z_aff = -r_in + s  # -r_in - W(lam \ (-lam o lam)) = -r_in + W lam
        dx_a, dy_a, dz_a = kkt_solve(lu, -r_d, -r_eq, rhs_z_aff)
        ds_a = -r_in - G @ dx_a

        alpha_aff = min(1.0, lay.max_step(s, ds_a), lay.max_step(z, dz_a))
        mu_aff = ((s + alpha_aff * ds_a) @ (z + alpha_aff * dz_a)) / lay.degree
        sigma = np.clip(mu_aff / mu, 0.0, 1.0) ** 3

        # combined direction with Mehrotra correction
        corr = _jordan_product(nt.apply_w_inv(ds_a), nt.apply_w(dz_a), lay)
        d_comb = -_jordan_product(nt.lam, nt.lam, lay) - corr + sigma * mu * e
        rhs_z = -r_in - nt.apply_w(nt.solve_lambda(d_comb))
        dx_c, dy_c, dz_c = kkt_solve(lu, -r_d, -r_eq, rhs_z)
        ds_c = -r_in - G @ dx_c

        alpha = min(1.0, 0.99 * lay.max_step(s, ds_c), 0.99 * lay.max_step(z, dz_c))
        if not np.isfinite(alpha) or alpha <= 1e-14:
            break
        x = x + alpha * dx_c
        y = y + alpha * dy_c
        z = z + alpha * dz_c
        s = s + alpha * ds_c

    if status == INFEASIBLE:
        _, y_full = full_sy(s, y, z)
        return ConeSolution(
            status=status,
            x=np.full(n, np.nan),
            y=y_full,
            s=np.full(m, np.nan),
            iterations=it,
            primal_residual=np.inf,
            dual_residual=np.inf,
            gap=np.inf,
        )

    x, y_full, s_full, pres, dres, gap = best
    return ConeSolution(
        status=status,
        x=x,
        y=y_full,
        s=s_full,
        iterations=it,
        primal_residual=pres,
        dual_residual=dres,
        gap=gap,
        objective=float(prog.c @ x),
    )
