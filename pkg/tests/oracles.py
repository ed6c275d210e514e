"""Independent reference implementations used only to check the package.

These are deliberately simple textbook methods (primal active-set QP, dense
grid enumeration, plain Riccati iteration) kept separate from the library
code paths they validate.
"""

import numpy as np


def active_set_qp(P, q, A, b, x0, max_iter=500, tol=1e-10):
    """Primal active-set method for  min 1/2 x'Px + q'x  s.t.  A x <= b.

    P must be positive definite and x0 feasible.  Returns the optimizer.
    """
    x = np.asarray(x0, dtype=float).copy()
    m = b.size
    assert np.all(A @ x <= b + 1e-9), "active-set oracle needs a feasible start"
    work = [i for i in range(m) if abs(A[i] @ x - b[i]) < tol]
    n = x.size
    for _ in range(max_iter):
        g = P @ x + q
        if work:
            Aw = A[work]
            KKT = np.block([[P, Aw.T], [Aw, np.zeros((len(work), len(work)))]])
            sol = np.linalg.solve(KKT, np.r_[-g, np.zeros(len(work))])
            p, lam = sol[:n], sol[n:]
        else:
            p, lam = np.linalg.solve(P, -g), np.zeros(0)
        if np.abs(p).max(initial=0.0) < 1e-11:
            if lam.size == 0 or lam.min() >= -1e-9:
                return x
            work.pop(int(np.argmin(lam)))
            continue
        alpha, blocking = 1.0, None
        for i in range(m):
            if i in work:
                continue
            Ap = A[i] @ p
            if Ap > tol:
                step = (b[i] - A[i] @ x) / Ap
                if step < alpha:
                    alpha, blocking = step, i
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)
    raise RuntimeError("active-set oracle did not converge")


def grid_search_cone(P, q, A, b, cones, coupling, lo, hi, points):
    """Dense enumeration oracle for the coupled-norm program.

    Evaluates the objective at every grid point of the box [lo, hi]^n that
    satisfies  A v + coupling @ ||D_j v + d_j|| <= b  and returns
    (best objective, best point).  Exact reformulation: with nonnegative
    coupling the epigraph variables can be eliminated by their norms.
    """
    n = q.size
    axes = [np.linspace(lo[i], hi[i], points) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    V = np.stack([m.ravel() for m in mesh], axis=1)          # (npts, n)
    t = np.stack([np.linalg.norm(V @ D.T + d, axis=1) for D, d in cones], axis=1) \
        if cones else np.zeros((V.shape[0], 0))
    feas = np.all(V @ A.T + t @ coupling.T <= b + 1e-12, axis=1)
    if not np.any(feas):
        return None, None
    Vf = V[feas]
    obj = 0.5 * np.einsum("ij,jk,ik->i", Vf, P, Vf) + Vf @ q
    i = int(np.argmin(obj))
    return float(obj[i]), Vf[i]


def riccati_iteration(F, G, Q, R, tol=1e-12, max_iter=100000):
    """Plain discrete Riccati fixed-point iteration; returns (S, K)."""
    S = Q.copy()
    for _ in range(max_iter):
        GS = G.T @ S
        Rbar = R + GS @ G
        K = np.linalg.solve(Rbar, GS @ F)
        Sn = Q + F.T @ S @ (F - G @ K)
        Sn = (Sn + Sn.T) / 2
        if np.abs(Sn - S).max() < tol * max(1.0, np.abs(Sn).max()):
            return Sn, K
        S = Sn
    raise RuntimeError("Riccati oracle did not converge")
