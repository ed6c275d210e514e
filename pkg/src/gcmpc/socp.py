"""Dense cone-program solver for the per-step robust MPC problem.

Problem class::

    minimize    (1/2) v' P v + q' v
    subject to  A v + Theta t <= b
                t_j >= || D_j v + d_j ||_2          j = 0..J-1

with ``Theta >= 0`` elementwise, so the norm epigraph variables enter the
linear inequalities monotonically and the problem is convex.

The solver is a Mehrotra predictor-corrector primal-dual interior-point
method with Nesterov-Todd scaling over the product cone
``R^m_+ x Q^(1+p_0) x ... x Q^(1+p_J-1)``.  Internally the problem is put
into the standard conic form ``G z + s = h, s in K`` with ``z = (v, t)``.
Ruiz row/column equilibration is applied first because the cost and
constraint scales in the target application span many orders of magnitude.

Everything is dense and deterministic: identical inputs (and warm starts)
produce bit-identical iterates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConeProgram", "SolveResult", "solve"]

_FRACTION_TO_BOUNDARY = 0.99
_OPTIMAL_RESIDUAL = 1e-6      # contract: status "optimal" implies residuals below this


@dataclass
class ConeProgram:
    """Quadratic objective, linear inequalities and norm-epigraph couplings.

    P        : (n, n) PSD cost matrix
    q        : (n,) linear cost
    A_in     : (m, n) inequality rows
    b_in     : (m,)
    cones    : list of (D_j, d_j) pairs, D_j of shape (p_j, n)
    coupling : (m, J) nonnegative weights of t_j in each inequality row
    """

    P: np.ndarray
    q: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    cones: list = field(default_factory=list)
    coupling: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-9 * max(1.0, np.abs(self.P).max()):
            raise ValueError("P must be symmetric")
        self.A_in = np.asarray(self.A_in, dtype=float).reshape(-1, n)
        self.b_in = np.asarray(self.b_in, dtype=float).ravel()
        if self.b_in.size != self.A_in.shape[0]:
            raise ValueError("A_in and b_in disagree on the number of rows")
        m, J = self.A_in.shape[0], len(self.cones)
        if self.coupling is None:
            self.coupling = np.zeros((m, J))
        self.coupling = np.asarray(self.coupling, dtype=float).reshape(m, J)
        if np.any(self.coupling < 0):
            raise ValueError("coupling coefficients must be nonnegative")
        self.cones = [(np.asarray(D, dtype=float).reshape(-1, n),
                       np.asarray(d, dtype=float).ravel()) for D, d in self.cones]
        for D, d in self.cones:
            if d.size != D.shape[0]:
                raise ValueError("cone offset dimension mismatch")

    @property
    def n(self):
        return self.q.size


@dataclass
class SolveResult:
    status: str                   # optimal | infeasible | max_iter
    z: np.ndarray                 # primal v
    t: np.ndarray                 # epigraph values at the solution
    objective: float
    residuals: dict               # stationarity, primal, dual, complementarity
    iterations: int
    dual_lin: np.ndarray          # multipliers of the linear inequality rows

    @property
    def kkt_max(self):
        return max(self.residuals.values())


# ---------------------------------------------------------------------------
# product-cone arithmetic on concatenated vectors
# ---------------------------------------------------------------------------

class _Cone:
    """Index bookkeeping and Jordan arithmetic for R^m_+ x product of SOCs."""

    def __init__(self, m_lin, soc_dims):
        self.m_lin = m_lin
        self.soc_dims = list(soc_dims)
        self.dim = m_lin + sum(self.soc_dims)
        self.slices = []
        off = m_lin
        for d in self.soc_dims:
            self.slices.append(slice(off, off + d))
            off += d
        self.degree = m_lin + len(self.soc_dims)

    def identity(self):
        e = np.zeros(self.dim)
        e[:self.m_lin] = 1.0
        for sl in self.slices:
            e[sl.start] = 1.0
        return e

    def product(self, u, v):
        out = np.empty(self.dim)
        out[:self.m_lin] = u[:self.m_lin] * v[:self.m_lin]
        for sl in self.slices:
            u0, u1 = u[sl.start], u[sl.start + 1:sl.stop]
            v0, v1 = v[sl.start], v[sl.start + 1:sl.stop]
            out[sl.start] = u0 * v0 + u1 @ v1
            out[sl.start + 1:sl.stop] = u0 * v1 + v0 * u1
        return out

    def inverse(self, u):
        out = np.empty(self.dim)
        out[:self.m_lin] = 1.0 / u[:self.m_lin]
        for sl in self.slices:
            u0, u1 = u[sl.start], u[sl.start + 1:sl.stop]
            det = u0 * u0 - u1 @ u1
            out[sl.start] = u0 / det
            out[sl.start + 1:sl.stop] = -u1 / det
        return out

    def residual(self, u):
        """How far u is inside the cone (positive = strictly interior)."""
        vals = [u[:self.m_lin].min()] if self.m_lin else []
        for sl in self.slices:
            vals.append(u[sl.start] - np.linalg.norm(u[sl.start + 1:sl.stop]))
        return min(vals) if vals else np.inf

    def push_interior(self, u):
        """Shift u blockwise along the cone identity until strictly interior."""
        out = u.copy()
        if self.m_lin:
            lo = out[:self.m_lin].min()
            if lo < 1.0:
                out[:self.m_lin] += 1.0 - lo
        for sl in self.slices:
            res = out[sl.start] - np.linalg.norm(out[sl.start + 1:sl.stop])
            if res < 1.0:
                out[sl.start] += 1.0 - res
        return out

    def max_step(self, u, du):
        """Largest alpha with u + alpha*du still in the (closed) cone."""
        alpha = np.inf
        if self.m_lin:
            neg = du[:self.m_lin] < 0
            if np.any(neg):
                alpha = np.min(-u[:self.m_lin][neg] / du[:self.m_lin][neg])
        for sl in self.slices:
            u0, u1 = u[sl.start], u[sl.start + 1:sl.stop]
            d0, d1 = du[sl.start], du[sl.start + 1:sl.stop]
            a = d0 * d0 - d1 @ d1
            b = 2.0 * (u0 * d0 - u1 @ d1)
            c = u0 * u0 - u1 @ u1
            roots = []
            if abs(a) < 1e-15:
                if b < -1e-15:
                    roots.append(-c / b)
            else:
                disc = b * b - 4.0 * a * c
                if disc >= 0.0:
                    sq = math.sqrt(disc)
                    roots.extend([(-b - sq) / (2 * a), (-b + sq) / (2 * a)])
            pos = [r for r in roots if r > 0.0]
            if d0 < 0:
                pos.append(-u0 / d0)
            if pos:
                alpha = min(alpha, min(pos))
        return alpha

    # Nesterov-Todd scaling ------------------------------------------------

    def nt_scaling(self, s, lam):
        """Blockwise W with W*lam == W^{-1}*s; returns (apply_W, apply_Winv)."""
        w_lin = np.sqrt(s[:self.m_lin] / lam[:self.m_lin]) if self.m_lin else np.zeros(0)
        socs = []
        for sl in self.slices:
            s_blk, l_blk = s[sl], lam[sl]
            js = s_blk[0] ** 2 - s_blk[1:] @ s_blk[1:]
            jl = l_blk[0] ** 2 - l_blk[1:] @ l_blk[1:]
            sbar = s_blk / math.sqrt(js)
            lbar = l_blk / math.sqrt(jl)
            gamma = math.sqrt((1.0 + sbar @ lbar) / 2.0)
            wbar = (sbar + np.r_[lbar[0], -lbar[1:]]) / (2.0 * gamma)
            beta = (js / jl) ** 0.25
            # symmetric Lorentz square root: Wbar @ Wbar == 2 wbar wbar' - J
            d = sl.stop - sl.start
            w0, w1 = wbar[0], wbar[1:]
            Wbar = np.empty((d, d))
            Wbar[0, 0] = w0
            Wbar[0, 1:] = w1
            Wbar[1:, 0] = w1
            Wbar[1:, 1:] = np.eye(d - 1) + np.outer(w1, w1) / (1.0 + w0)
            Wm = beta * Wbar
            Winvm = Wbar.copy()
            Winvm[0, 1:] = -w1
            Winvm[1:, 0] = -w1
            Winvm /= beta
            socs.append((Wm, Winvm))

        def apply_W(x, out=None):
            y = np.empty_like(x) if out is None else out
            y[:self.m_lin] = w_lin * x[:self.m_lin]
            for sl, (Wm, _) in zip(self.slices, socs):
                y[sl] = Wm @ x[sl]
            return y

        def apply_Winv(x, out=None):
            y = np.empty_like(x) if out is None else out
            y[:self.m_lin] = x[:self.m_lin] / w_lin
            for sl, (_, Winvm) in zip(self.slices, socs):
                y[sl] = Winvm @ x[sl]
            return y

        def scale_matrix(Gmat):
            out = np.empty_like(Gmat)
            out[:self.m_lin] = Gmat[:self.m_lin] / w_lin[:, None]
            for sl, (_, Winvm) in zip(self.slices, socs):
                out[sl] = Winvm @ Gmat[sl]
            return out

        return apply_W, apply_Winv, scale_matrix


# ---------------------------------------------------------------------------
# equilibration
# ---------------------------------------------------------------------------

def _ruiz_equilibrate(G, blocks, iters=8):
    """Ruiz scaling of G with per-block uniform row scales.

    blocks is a list of (start, stop) row ranges that must share one scale
    (each SOC block; linear rows are singleton blocks).  Returns (r, c) with
    scaled matrix diag(r) @ G @ diag(c).
    """
    m, n = G.shape
    r = np.ones(m)
    c = np.ones(n)
    M = G.copy()
    for _ in range(iters):
        rn = np.zeros(m)
        for start, stop in blocks:
            blk = np.abs(M[start:stop]).max(initial=0.0)
            rn[start:stop] = 1.0 / math.sqrt(blk) if blk > 0 else 1.0
        cnorm = np.abs(M).max(axis=0, initial=0.0)
        cn = np.where(cnorm > 0, 1.0 / np.sqrt(cnorm), 1.0)
        M = rn[:, None] * M * cn[None, :]
        r *= rn
        c *= cn
    return r, c


# ---------------------------------------------------------------------------
# main entry
# ---------------------------------------------------------------------------

def solve(prog: ConeProgram, warm_start=None, tol=1e-9, max_iter=100) -> SolveResult:
    """Solve a :class:`ConeProgram`.

    warm_start : optional (n,) primal guess for v (used to seed the iterates;
                 the result does not depend on it beyond round-off-level
                 iteration differences)
    """
    n = prog.n
    # drop cones that no inequality row references: their epigraph variable
    # is unconstrained from above and carries no pressure
    keep = [j for j in range(len(prog.cones))
            if prog.coupling.shape[0] and np.any(prog.coupling[:, j] > 0)]
    cones = [prog.cones[j] for j in keep]
    coupling = prog.coupling[:, keep] if keep else np.zeros((prog.A_in.shape[0], 0))
    J = len(cones)
    m_lin = prog.A_in.shape[0]

    if m_lin == 0 and J == 0:
        v = np.linalg.solve(prog.P, -prog.q) if n else np.zeros(0)
        obj = 0.5 * v @ prog.P @ v + prog.q @ v
        res = _unscaled_residuals(prog, v, np.zeros(0), np.zeros(0), [], np.zeros((0, 0)))
        return SolveResult("optimal", v, np.zeros(0), obj, res, 0, np.zeros(0))

    # conic form: z = (v, t), G z + s = h
    nz = n + J
    soc_dims = [1 + D.shape[0] for D, _ in cones]
    cone = _Cone(m_lin, soc_dims)
    G = np.zeros((cone.dim, nz))
    h = np.zeros(cone.dim)
    G[:m_lin, :n] = prog.A_in
    G[:m_lin, n:] = coupling
    h[:m_lin] = prog.b_in
    for j, (sl, (D, d)) in enumerate(zip(cone.slices, cones)):
        G[sl.start, n + j] = -1.0
        G[sl.start + 1:sl.stop, :n] = -D
        h[sl.start + 1:sl.stop] = d

    P = np.zeros((nz, nz))
    P[:n, :n] = prog.P
    q = np.zeros(nz)
    q[:n] = prog.q

    # equilibrate rows/columns, then normalize the cost scale
    blocks = [(i, i + 1) for i in range(m_lin)] + [(sl.start, sl.stop) for sl in cone.slices]
    rsc, csc = _ruiz_equilibrate(G, blocks)
    Gs_mat = rsc[:, None] * G * csc[None, :]
    hs = rsc * h
    Ps = csc[:, None] * P * csc[None, :]
    qs = csc * q
    cost_scale = max(1.0, np.abs(Ps).max(initial=0.0), np.abs(qs).max(initial=0.0))
    Ps /= cost_scale
    qs /= cost_scale

    # start point
    z = np.zeros(nz)
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).ravel()
        z[:n] = ws[:n] / csc[:n]
        for j, (D, d) in enumerate(cones):
            z[n + j] = (np.linalg.norm(D @ ws[:n] + d) * 1.05 + 1.0) / csc[n + j]
    s = cone.push_interior(hs - Gs_mat @ z)
    lam = cone.identity()

    status = "max_iter"
    iters_done = max_iter
    h_norm = max(1.0, np.abs(hs).max(initial=0.0))
    q_norm = max(1.0, np.abs(qs).max(initial=0.0))

    for it in range(max_iter):
        r_x = Ps @ z + qs + Gs_mat.T @ lam
        r_s = Gs_mat @ z + s - hs
        gap = s @ lam
        obj_s = 0.5 * z @ Ps @ z + qs @ z
        pri = np.abs(r_s).max(initial=0.0) / h_norm
        dua = np.abs(r_x).max(initial=0.0) / q_norm
        # duality gap in true objective units (invariant to the scalings)
        rel_gap = gap * cost_scale / max(1.0, abs(obj_s) * cost_scale)
        if pri < tol and dua < tol and rel_gap < tol:
            status = "optimal"
            iters_done = it
            break

        # primal infeasibility certificate: lam >= 0 in K*, G'lam ~ 0, h'lam < 0
        hl = hs @ lam
        if hl < 0:
            cert = np.abs(Gs_mat.T @ lam).max(initial=0.0) / (-hl)
            if cert < 1e-10:
                status = "infeasible"
                iters_done = it
                break

        apply_W, apply_Winv, scale_matrix = cone.nt_scaling(s, lam)
        lam_t = apply_W(lam)
        GsW = scale_matrix(Gs_mat)              # W^{-1} G
        Hmat = Ps + GsW.T @ GsW
        Hmat[np.diag_indices_from(Hmat)] += 1e-14
        try:
            L = np.linalg.cholesky(Hmat)
        except np.linalg.LinAlgError:
            status = "max_iter"
            iters_done = it
            break

        Winv_rs = apply_Winv(r_s)
        mu = gap / cone.degree

        def newton(d_rhs):
            beta = cone.product(cone.inverse(lam_t), d_rhs)
            rhs = -r_x - GsW.T @ (Winv_rs - beta)
            dz = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            dlam = apply_Winv(GsW @ dz + Winv_rs - beta)
            ds = -r_s - Gs_mat @ dz
            return dz, dlam, ds

        # predictor
        d_rhs = cone.product(lam_t, lam_t)
        dz_a, dlam_a, ds_a = newton(d_rhs)
        alpha_a = min(1.0, cone.max_step(s, ds_a), cone.max_step(lam, dlam_a))
        gap_a = (s + alpha_a * ds_a) @ (lam + alpha_a * dlam_a)
        sigma = min(1.0, max(0.0, gap_a / gap)) ** 3

        # corrector
        corr = cone.product(apply_Winv(ds_a), apply_W(dlam_a))
        d_rhs = cone.product(lam_t, lam_t) + corr - sigma * mu * cone.identity()
        dz, dlam, ds = newton(d_rhs)
        alpha = _FRACTION_TO_BOUNDARY * min(
            cone.max_step(s, ds), cone.max_step(lam, dlam))
        alpha = min(1.0, alpha)
        z += alpha * dz
        s += alpha * ds
        lam += alpha * dlam

    # recover unscaled solution and duals
    v = csc[:n] * z[:n]
    t_hat = csc[n:] * z[n:]
    t_full = np.array([np.linalg.norm(D @ v + d) for D, d in prog.cones])
    lam_lin = (rsc[:m_lin] * lam[:m_lin]) * cost_scale
    lam_socs = [(rsc[sl] * lam[sl]) * cost_scale for sl in cone.slices]
    obj = 0.5 * v @ prog.P @ v + prog.q @ v
    residuals = _unscaled_residuals(prog, v, t_hat, lam_lin, lam_socs, coupling, keep)
    if status == "optimal" and max(residuals.values()) > _OPTIMAL_RESIDUAL:
        status = "max_iter"
    return SolveResult(status, v, t_full, obj, residuals, iters_done, lam_lin)


def _unscaled_residuals(prog, v, t_hat, lam_lin, lam_socs, coupling, keep=()):
    n = prog.n
    q_ref = max(1.0, np.abs(prog.q).max(initial=0.0), np.abs(prog.P).max(initial=0.0))
    b_ref = max(1.0, np.abs(prog.b_in).max(initial=0.0))

    stat = prog.P @ v + prog.q
    if lam_lin.size:
        stat = stat + prog.A_in.T @ lam_lin
    for jj, sl_l in enumerate(lam_socs):
        D, _ = prog.cones[keep[jj]]
        stat = stat - D.T @ sl_l[1:]
    stat_t = []
    for jj in range(len(lam_socs)):
        stat_t.append(coupling[:, jj] @ lam_lin - lam_socs[jj][0])
    stationarity = np.abs(np.r_[stat, stat_t]).max(initial=0.0) / q_ref

    t_true = np.array([np.linalg.norm(D @ v + d) for D, d in prog.cones])
    if prog.b_in.size:
        t_used = np.zeros(len(prog.cones))
        for jj, j in enumerate(keep):
            t_used[j] = max(t_hat[jj], t_true[j]) if t_hat.size else t_true[j]
        lin_viol = prog.A_in @ v + prog.coupling @ t_used - prog.b_in
        primal = max(0.0, lin_viol.max(initial=0.0)) / b_ref
    else:
        primal = 0.0

    dual = 0.0
    if lam_lin.size:
        dual = max(dual, -lam_lin.min(initial=0.0))
    for sl_l in lam_socs:
        dual = max(dual, np.linalg.norm(sl_l[1:]) - sl_l[0])
    dual = max(0.0, dual) / max(1.0, q_ref)

    comp = 0.0
    if lam_lin.size:
        slack = prog.b_in - prog.A_in @ v
        if len(prog.cones):
            t_used = np.zeros(len(prog.cones))
            for jj, j in enumerate(keep):
                t_used[j] = t_hat[jj] if t_hat.size else t_true[j]
            slack = slack - prog.coupling @ t_used
        comp = abs(slack @ lam_lin)
    for jj, sl_l in enumerate(lam_socs):
        D, d = prog.cones[keep[jj]]
        s_soc = np.r_[t_hat[jj], D @ v + d]
        comp += abs(s_soc @ sl_l)
    objective = 0.5 * v @ prog.P @ v + prog.q @ v
    complementarity = comp / max(1.0, abs(objective))

    return {
        "stationarity": float(stationarity),
        "primal": float(primal),
        "dual": float(dual),
        "complementarity": float(complementarity),
    }
