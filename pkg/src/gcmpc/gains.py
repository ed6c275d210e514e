"""Guaranteed-cost gain synthesis and disturbance-margin recursions.

For the uncertain discrete system  x+ = (F + Hd D E_a) x + (G + Hd D E_b) u
with unit-bounded D, the guaranteed-cost backward recursion couples a
Riccati-like update with an uncertainty completion parameterized by a scalar
epsilon > 0::

    X_{k+1} = (S_{k+1}^{-1} - eps Hd Hd')^{-1}
    Rbar_k  = R + E_b' E_b / eps + G' X_{k+1} G
    K_k     = Rbar_k^{-1} (G' X_{k+1} F + E_b' E_a / eps)
    S_k     = Q + E_a' E_a / eps + F' X_{k+1} F - W Rbar_k^{-1} W',
              W = F' X_{k+1} G + E_a' E_b / eps

valid while  S^{-1} - eps Hd Hd'  stays positive definite.  Under the law
u = -K x the realized quadratic cost of any admissible uncertainty sequence
is bounded by x0' S0 x0.  With zero uncertainty the recursion is the plain
Riccati iteration and K the LQR gain.

The terminal matrix is the stationary solution (the recursion iterated to a
fixed point), so the per-step gains coincide with the stationary gain.
States whose dynamics are exactly held (row of F a unit vector, zero input
and disturbance rows) are uncontrollable at eigenvalue one; the cost-to-go
entries on that block absorb the unavoidable tracking residual and grow
without bound, so they are excluded from the convergence test and from the
trace objective used to select epsilon.

epsilon is chosen to minimize the (reduced) trace of S0: the feasible upper
end is located by doubling, then a 61-point log grid spanning twelve decades
below it is swept and refined by golden section.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelope import EnvelopeConstraints
from .vehicle import UncertainAffineSystem

__all__ = [
    "GcGains",
    "MarginCoefficients",
    "SynthesisError",
    "synthesize",
    "margin_coefficients",
    "margin_table",
    "robustness_margin",
]

EPS_GRID_POINTS = 61
EPS_GRID_DECADES = 12.0
GOLDEN_ITERS = 16
FIXED_POINT_TOL = 1e-10
SWEEP_TOL = 1e-8
MAX_FP_ITERS = 20000


class SynthesisError(RuntimeError):
    """No feasible epsilon produced a convergent, positive recursion."""


@dataclass(frozen=True)
class GcGains:
    """Synthesized guaranteed-cost artifacts over an N-step horizon.

    The recursion is run to its stationary point, so the per-step lists hold
    identical entries; they are kept as lists to preserve the time-indexed
    contract of the optimization layer.
    """

    epsilon: float
    S: list            # N+1 cost-to-go matrices, 6x6 symmetric PSD
    X: list            # N+1 uncertainty-completed matrices
    K: list            # N gain rows (1x6)
    Rbar: list         # N offset cost scalars (> 0)
    horizon: int
    trace_reduced: float     # trace of S0 over the convergent states

    @property
    def K_stationary(self):
        return self.K[0]


@dataclass(frozen=True)
class MarginCoefficients:
    """Disturbance propagation data for the robustness margins.

    rho[i] = ||E1 Fcl^i Hd||_2 and c[k, i] is the triangular recursion
    c(k,i) = rho_{k-i-1} + sum_j rho_j c(k-j-1, i); both vanish with zero
    uncertainty.
    """

    rho: np.ndarray          # (N,)
    c: np.ndarray            # (N, N) lower triangular, c[k, i] for i < k
    F_cl: np.ndarray         # closed-loop transition F - G K
    E1: np.ndarray           # E_a - E_b K (stationary)
    E1_k: list               # per-step copies


def _held_state_mask(F, G, Hd, n):
    """Convergence/trace mask excluding the held-state diagonal block."""
    held = []
    for i in range(n):
        row = np.zeros(n)
        row[i] = 1.0
        if np.array_equal(F[i], row) and not G[i].any() and not Hd[i].any():
            held.append(i)
    mask = np.ones((n, n))
    if held:
        mask[np.ix_(held, held)] = 0.0
    return mask, held


def _gc_fixed_point(F, G, Q, R, Hd, E_a, E_b, eps, mask,
                    S0=None, tol=FIXED_POINT_TOL, max_iters=MAX_FP_ITERS,
                    accelerate=True):
    """Iterate the guaranteed-cost recursion to its stationary point.

    Returns (S, K, Rbar, X) or None when the positive-definiteness condition
    fails or the masked entries do not converge.
    """
    nw = Hd.shape[1]
    eye_w = np.eye(nw)
    EaTEa = E_a.T @ E_a / eps
    EbTEb = (E_b.ravel() @ E_b.ravel()) / eps
    EaTEb = E_a.T @ E_b / eps
    Qeff = Q + EaTEa
    Rconst = float(R[0, 0]) + EbTEb

    def step(S):
        """One backward sweep; None when the completion loses definiteness."""
        HtS = Hd.T @ S
        Minner = eye_w / eps - HtS @ Hd
        if nw == 2:
            det = Minner[0, 0] * Minner[1, 1] - Minner[0, 1] * Minner[1, 0]
            if Minner[0, 0] <= 0.0 or det <= 0.0:
                return None
            Minv = np.array([[Minner[1, 1], -Minner[0, 1]],
                             [-Minner[1, 0], Minner[0, 0]]]) / det
        else:
            try:
                np.linalg.cholesky(Minner)
            except np.linalg.LinAlgError:
                return None
            Minv = np.linalg.inv(Minner)
        X = S + HtS.T @ Minv @ HtS
        XG = X @ G
        XF = X @ F
        Rbar = Rconst + G[:, 0] @ XG[:, 0]
        if Rbar <= 0.0:
            return None
        W = (F.T @ XG + EaTEb).ravel()
        Sn = Qeff + F.T @ XF - np.outer(W, W) / Rbar
        return 0.5 * (Sn + Sn.T), X, XF, Rbar

    def finish(S_fixed, out):
        _, X, XF, Rbar = out
        K = (G.T @ XF + EaTEb.T) / Rbar
        return S_fixed, K, np.array([[Rbar]]), X

    def run_plain(S_start, budget):
        S = S_start.copy()
        for _ in range(budget):
            out = step(S)
            if out is None:
                return None
            Sn = out[0]
            delta = float((np.abs(Sn - S) * mask).max())
            scale = max(1.0, float((np.abs(Sn) * mask).max()))
            S = Sn
            if delta < tol * scale:
                return finish(Sn, out)
        return None

    def run_accelerated(S_start, budget, window=10, period=25):
        """Plain sweeps with periodic extrapolation jumps; mishaps -> None.

        Every ``period`` iterations the geometric tail is extrapolated from
        the last ``window`` iterates (minimal-polynomial style).  A jump is
        taken only if it strictly shrinks the fixed-point residual and keeps
        the iterate positive semidefinite: the map also has anti-stabilizing
        fixed points whose basins must be avoided.
        """
        hist_F, hist_R = [], []
        S = S_start.copy()
        it = 0
        while it < budget:
            out = step(S)
            it += 1
            if out is None:
                return None
            Sn = out[0]
            delta = float((np.abs(Sn - S) * mask).max())
            scale = max(1.0, float((np.abs(Sn) * mask).max()))
            if delta < tol * scale:
                if np.linalg.eigvalsh(Sn).min() < -1e-8 * scale:
                    return None
                return finish(Sn, out)
            hist_F.append(Sn.ravel().copy())
            hist_R.append((Sn - S).ravel())
            if len(hist_F) > window:
                hist_F.pop(0)
                hist_R.pop(0)
            S = Sn
            if it % period == 0 and len(hist_F) == window:
                dF = np.diff(np.asarray(hist_F).T, axis=1)
                dR = np.diff(np.asarray(hist_R).T, axis=1)
                gam = np.linalg.lstsq(dR, hist_R[-1], rcond=1e-12)[0]
                acc = (hist_F[-1] - dF @ gam).reshape(Sn.shape)
                acc = 0.5 * (acc + acc.T)
                probe = step(acc)
                it += 1
                if probe is None:
                    continue
                d_acc = float((np.abs(probe[0] - acc) * mask).max())
                if d_acc < 0.3 * delta and \
                        np.linalg.eigvalsh(probe[0]).min() >= -1e-8 * scale:
                    S = probe[0]
                    hist_F, hist_R = [], []
        return None

    S_start = Q if S0 is None else S0
    if accelerate:
        out = run_accelerated(S_start, min(4000, max_iters))
        if out is not None:
            return out
    return run_plain(S_start, max_iters)


def _reduced_trace(S, held):
    tr = float(np.trace(S))
    for i in held:
        tr -= S[i, i]
    return tr


def synthesize(sys: UncertainAffineSystem, Q, R, horizon,
               eps_grid_points=EPS_GRID_POINTS,
               eps_grid_decades=EPS_GRID_DECADES) -> GcGains:
    """Select epsilon and build the stationary guaranteed-cost gains."""
    F, G, Hd = sys.F, sys.G, sys.Hd
    E_a, E_b = sys.E_a, sys.E_b
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = F.shape[0]
    mask, held = _held_state_mask(F, G, Hd, n)

    def run(eps, warm=None, tol=SWEEP_TOL):
        out = _gc_fixed_point(F, G, Q, R, Hd, E_a, E_b, eps, mask, S0=warm, tol=tol)
        if out is None and warm is not None:
            out = _gc_fixed_point(F, G, Q, R, Hd, E_a, E_b, eps, mask, tol=tol)
        return out

    certain = not (Hd.any() and (E_a.any() or E_b.any()))
    if certain:
        eps_star = 1.0
        final = run(eps_star, tol=FIXED_POINT_TOL)
        if final is None:
            raise SynthesisError("nominal Riccati recursion did not converge")
    else:
        # locate the feasible upper end of the epsilon range by doubling
        eps_hi = 1.0
        probe = run(eps_hi)
        if probe is not None:
            while eps_hi < 1e15:
                nxt = run(eps_hi * 4.0, warm=probe[0])
                if nxt is None:
                    break
                eps_hi *= 4.0
                probe = nxt
        else:
            while probe is None and eps_hi > 1e-15:
                eps_hi /= 4.0
                probe = run(eps_hi)
            if probe is None:
                raise SynthesisError(
                    "no feasible epsilon found while probing down to 1e-15")
        log_hi = math.log10(eps_hi) + math.log10(4.0)   # first rejected scale
        grid = np.logspace(log_hi - eps_grid_decades, log_hi, eps_grid_points)

        evals = {}
        warm = None
        for eps in grid:
            out = run(eps, warm=warm)
            if out is None:
                evals[eps] = math.inf
                continue
            warm = out[0]
            evals[eps] = _reduced_trace(out[0], held)
        feasible = [e for e, tr in evals.items() if math.isfinite(tr)]
        if not feasible:
            raise SynthesisError(
                f"no feasible epsilon on the search grid "
                f"[{grid[0]:.3e}, {grid[-1]:.3e}]")

        order = list(grid)
        i_best = int(np.argmin([evals[e] for e in order]))
        lo = order[max(0, i_best - 1)]
        hi = order[min(len(order) - 1, i_best + 1)]

        # golden-section refinement on log10(eps); infeasible points are +inf
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = math.log10(lo), math.log10(hi)
        cache = {}

        def value(le):
            if le not in cache:
                out = run(10.0 ** le, warm=warm)
                cache[le] = (math.inf, None) if out is None else \
                    (_reduced_trace(out[0], held), out[0])
            return cache[le][0]

        c_pt = b - invphi * (b - a)
        d_pt = a + invphi * (b - a)
        for _ in range(GOLDEN_ITERS):
            if value(c_pt) <= value(d_pt):
                b, d_pt = d_pt, c_pt
                c_pt = b - invphi * (b - a)
            else:
                a, c_pt = c_pt, d_pt
                d_pt = a + invphi * (b - a)
        for e in feasible:
            value(math.log10(e))
        candidates = sorted((tr, le) for le, (tr, _) in cache.items()
                            if math.isfinite(tr))

        # the trace often keeps improving right up to the positive-definite
        # boundary, where the final tight-tolerance run can stall: walk the
        # best candidates until one survives it
        final = eps_star = None
        for tr, le in candidates[:10]:
            out = _gc_fixed_point(F, G, Q, R, Hd, E_a, E_b, 10.0 ** le, mask,
                                  S0=cache[le][1], tol=FIXED_POINT_TOL)
            if out is not None:
                final, eps_star = out, 10.0 ** le
                break
        if final is None:
            raise SynthesisError(
                "no candidate epsilon survived the tight-tolerance run; "
                f"best grid trace {candidates[0][0]:.3e}" if candidates else
                "no feasible epsilon candidates")

    S, K, Rbar, X = final
    N = int(horizon)
    return GcGains(
        epsilon=float(eps_star),
        S=[S] * (N + 1),
        X=[X] * (N + 1),
        K=[K] * N,
        Rbar=[float(Rbar[0, 0])] * N,
        horizon=N,
        trace_reduced=_reduced_trace(S, held),
    )


def margin_table(rho):
    """Unroll the triangular recursion c(k,i) = rho_{k-i-1} + sum rho_j c(.).

    rho may be shorter than the table; missing tail norms count as zero.
    Returns an (N, N) array with c[k, i] filled for i < k.
    """
    rho = np.asarray(rho, dtype=float)
    N = rho.size
    c = np.zeros((N, N))
    for k in range(1, N):
        for i in range(k):
            val = rho[k - i - 1]
            for j in range(k - i - 1):
                val += rho[j] * c[k - j - 1, i]
            c[k, i] = val
    return c


def margin_coefficients(sys: UncertainAffineSystem, gains: GcGains) -> MarginCoefficients:
    """Disturbance propagation norms and the triangular margin recursion."""
    K = gains.K_stationary
    F_cl = sys.F - sys.G @ K
    E1 = sys.E_a - sys.E_b @ K
    N = gains.horizon
    rho = np.empty(N)
    P = np.eye(F_cl.shape[0])
    for i in range(N):
        rho[i] = np.linalg.norm(E1 @ P @ sys.Hd, 2)
        P = F_cl @ P
    return MarginCoefficients(rho=rho, c=margin_table(rho), F_cl=F_cl, E1=E1, E1_k=[E1] * N)


def robustness_margin(coeffs: MarginCoefficients, gains: GcGains,
                      sys: UncertainAffineSystem, constraints: EnvelopeConstraints,
                      xs, vs, k, i):
    """Worst-case constraint back-off at step k for constraint row i.

    xs, vs are the predicted state/offset sequences (length >= k).  The
    disturbance size at each past step is phi_j = ||E1 x_j + E_b v_j||_2,
    closed over the feedback of past disturbances into the states via the
    triangular c table, and propagated into the constraint row through the
    closed loop.
    """
    if k == 0:
        return 0.0
    phi = np.array([
        np.linalg.norm(coeffs.E1_k[j] @ np.asarray(xs[j]).ravel()
                       + sys.E_b.ravel() * float(vs[j]))
        for j in range(k)
    ])
    phi_bar = phi.copy()
    for j in range(1, k):
        phi_bar[j] += coeffs.c[j, :j] @ phi[:j]
    row = constraints.M[i] - constraints.N[i, 0] * gains.K[min(k, gains.horizon - 1)].ravel()
    total = 0.0
    P = np.eye(sys.F.shape[0])
    # powers Fcl^{k-j-1} for j = k-1 .. 0
    for j in range(k - 1, -1, -1):
        total += np.abs(row @ P @ sys.Hd).sum() * phi_bar[j]
        P = coeffs.F_cl @ P
    return float(total)
