"""Gain-scheduled robust MPC controller for the handling envelope.

A table of precomputed data is built on a (speed, rear-slip) grid: the
discretized uncertain system, the guaranteed-cost gains, the margin
recursion coefficients and the envelope constraints, plus the condensed
prediction matrices the per-step cone program is assembled from.

At runtime each control step looks up the nearest table entry, rebuilds the
constraint bounds at the exact measured speed (the matrices M, N are speed
independent), assembles the cone program over the offset sequence v and
solves it.  The commanded front force is u = -K x + v_0 and the steering
angle follows from inverting the mean front tire force curve.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .envelope import EnvelopeConstraints, build_constraints, constraint_bounds
from .gains import GcGains, MarginCoefficients, margin_coefficients, synthesize
from .socp import ConeProgram, solve
from .tires import ForceEnvelope, ForceRangeError, inverse_mean_force
from .vehicle import UncertainAffineSystem, VehicleParams, augmented_system, linear_bicycle

__all__ = [
    "ControllerConfig",
    "ScheduledTable",
    "TableEntry",
    "StepResult",
    "build_cost",
    "precompute_table",
    "control_step",
    "steering_from_force",
    "advance_reference",
]


@dataclass(frozen=True)
class ControllerConfig:
    """Tuning and scheduling parameters of the controller."""

    horizon: int = 15
    w_vy: float = 1.0            # s^2/m^2, lateral speed tracking weight
    w_r: float = 1.0e6           # s^2/rad^2, yaw rate tracking weight
    w_fyf: float = 1.0e-10       # 1/N^2, front force effort weight
    t_s: float = 0.02            # s
    vx_min: float = 9.0          # m/s, schedule grid
    vx_max: float = 31.0
    vx_step: float = 0.5
    alpha_points: int = 21       # rear-slip grid points over +/- peak
    margin_linearization: bool = False
    yaw_limit_gravity: bool = True
    conservative_slip: bool = False

    def __post_init__(self):
        if min(self.w_vy, self.w_r, self.w_fyf) <= 0:
            raise ValueError("all cost weights must be > 0")
        if self.t_s <= 0 or self.horizon < 2:
            raise ValueError("need t_s > 0 and a horizon of at least 2 steps")
        if not (0 < self.vx_min <= self.vx_max) or self.vx_step <= 0:
            raise ValueError("speed grid must satisfy 0 < vx_min <= vx_max, step > 0")


def build_cost(cfg: ControllerConfig):
    """Tracking cost (Q, R): differences of reference and plant states."""
    Q = np.zeros((6, 6))
    Q[0, 0] = Q[3, 3] = cfg.w_vy
    Q[0, 3] = Q[3, 0] = -cfg.w_vy
    Q[1, 1] = Q[4, 4] = cfg.w_r
    Q[1, 4] = Q[4, 1] = -cfg.w_r
    return Q, float(cfg.w_fyf)


@dataclass
class CondensedData:
    """Prediction maps of one table entry, precomputed off the hot path.

    With x_{k+1} = Fcl x_k + G v_k the stacked constraint rows become
    A_rows v + coupling * phi <= o_rep - C_rows x0, and the norm arguments
    are P_j v + (E1F x0)_j.
    """

    K: np.ndarray            # stationary gain (1, 6)
    A_rows: np.ndarray       # (6N, N)
    C_rows: np.ndarray       # (6N, 6)
    coupling: np.ndarray     # (6N, N-1), nonnegative
    cone_mats: list          # N-1 matrices (3, N)
    E1F: np.ndarray          # (3(N-1), 6) stacked E1 Fcl^j
    P_cost: np.ndarray       # (N, N) = 2 diag(Rbar)
    o_rep: np.ndarray        # (6N,) bound template at the entry speed


def _condense(sys: UncertainAffineSystem, gains: GcGains,
              margins: MarginCoefficients, cons: EnvelopeConstraints) -> CondensedData:
    N = gains.horizon
    K = gains.K_stationary
    F_cl, E1 = margins.F_cl, margins.E1
    G, Hd, E_b = sys.G, sys.Hd, sys.E_b
    n = F_cl.shape[0]

    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(F_cl @ powers[-1])
    xmaps = []
    for k in range(N):
        Xm = np.zeros((n, N))
        for j in range(k):
            Xm[:, j] = (powers[k - 1 - j] @ G).ravel()
        xmaps.append(Xm)

    A_tilde = cons.M - cons.N @ K          # (6, 6)
    # per-power l1 norms of the closed-loop constraint rows into Hd
    rn = np.empty((N, 6))
    for m in range(N):
        rn[m] = np.abs(A_tilde @ powers[m] @ Hd).sum(axis=1)

    A_rows = np.zeros((6 * N, N))
    C_rows = np.zeros((6 * N, 6))
    coupling = np.zeros((6 * N, max(N - 1, 0)))
    c_tab = margins.c
    for k in range(N):
        rows = slice(6 * k, 6 * k + 6)
        A_rows[rows] = A_tilde @ xmaps[k]
        A_rows[rows, k] += cons.N.ravel()
        C_rows[rows] = A_tilde @ powers[k]
        for j in range(k):
            w = rn[k - 1 - j].copy()
            for l in range(j + 1, k):
                w += rn[k - 1 - l] * c_tab[l, j]
            coupling[rows, j] = w

    cone_mats = []
    E1F = np.zeros((3 * (N - 1), 6))
    for j in range(N - 1):
        Pj = E1 @ xmaps[j]
        Pj[:, j] += E_b.ravel()
        cone_mats.append(Pj)
        E1F[3 * j:3 * j + 3] = E1 @ powers[j]

    return CondensedData(
        K=K, A_rows=A_rows, C_rows=C_rows, coupling=coupling,
        cone_mats=cone_mats, E1F=E1F,
        P_cost=2.0 * np.diag(gains.Rbar),
        o_rep=np.tile(cons.o, N),
    )


@dataclass
class TableEntry:
    system: UncertainAffineSystem
    gains: GcGains
    margins: MarginCoefficients
    constraints: EnvelopeConstraints
    condensed: CondensedData = None

    def __post_init__(self):
        if self.condensed is None:
            self.condensed = _condense(self.system, self.gains,
                                       self.margins, self.constraints)


@dataclass
class ScheduledTable:
    vehicle: VehicleParams
    env_front: ForceEnvelope
    env_rear: ForceEnvelope
    cfg: ControllerConfig
    vx_grid: np.ndarray
    alpha_grid: np.ndarray
    entries: list                     # entries[i_vx][i_alpha]

    def lookup(self, v_x, alpha_r):
        if not (self.vx_grid[0] - 0.5 * self.cfg.vx_step <= v_x
                <= self.vx_grid[-1] + 0.5 * self.cfg.vx_step):
            raise ValueError(
                f"speed {v_x:.2f} m/s outside the scheduled range "
                f"[{self.vx_grid[0]}, {self.vx_grid[-1]}]")
        i = int(np.argmin(np.abs(self.vx_grid - v_x)))
        j = int(np.argmin(np.abs(self.alpha_grid - alpha_r)))
        return i, j


def _build_entry(args):
    vp, env_f, env_r, cfg, v_x, a_hat = args
    Q, R = build_cost(cfg)
    sys = augmented_system(vp, env_f, env_r, v_x, a_hat, a_hat, cfg.t_s)
    mu = vp.front_tires.nominal.friction
    cons = build_constraints(vp, env_f, env_r, mu, v_x,
                             yaw_limit_gravity=cfg.yaw_limit_gravity,
                             conservative_slip=cfg.conservative_slip)
    gains = synthesize(sys, Q, [[R]], cfg.horizon)
    margins = margin_coefficients(sys, gains)
    return sys, gains, margins, cons


def table_cache_key(vp: VehicleParams, cfg: ControllerConfig):
    """Content hash of every physical and controller parameter."""
    h = hashlib.sha256()
    fields = [
        vp.mass, vp.yaw_inertia, vp.dist_front, vp.dist_rear, vp.gravity,
    ]
    for tires in (vp.front_tires, vp.rear_tires):
        n = tires.nominal
        fields += [n.cornering_stiffness, n.friction_ratio, n.friction,
                   n.normal_force, *tires.rel_bounds]
    fields += [cfg.horizon, cfg.w_vy, cfg.w_r, cfg.w_fyf, cfg.t_s,
               cfg.vx_min, cfg.vx_max, cfg.vx_step, cfg.alpha_points,
               float(cfg.yaw_limit_gravity), float(cfg.conservative_slip)]
    h.update(",".join(repr(float(f)) for f in fields).encode())
    return h.hexdigest()[:16]


def precompute_table(vp: VehicleParams, env_f: ForceEnvelope, env_r: ForceEnvelope,
                     cfg: ControllerConfig, n_jobs=None, cache_dir=None,
                     progress=False) -> ScheduledTable:
    """Build (or load from cache) the full scheduling table.

    Synthesis failures abort with the offending grid point in the message.
    """
    n_vx = int(round((cfg.vx_max - cfg.vx_min) / cfg.vx_step)) + 1
    vx_grid = cfg.vx_min + cfg.vx_step * np.arange(n_vx)
    peak = env_r.peak_slip_inf if cfg.conservative_slip else env_r.peak_slip
    alpha_grid = np.linspace(-peak, peak, cfg.alpha_points)

    cache_path = None
    if cache_dir is not None:
        from pathlib import Path
        cache_path = Path(cache_dir) / f"gains_{table_cache_key(vp, cfg)}.npz"
        if cache_path.exists():
            return _load_table(cache_path, vp, env_f, env_r, cfg, vx_grid, alpha_grid)

    jobs = [(vp, env_f, env_r, cfg, float(vx), float(ah))
            for vx in vx_grid for ah in alpha_grid]
    results = []
    if n_jobs is None or n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            for idx, res in enumerate(ex.map(_build_entry, jobs, chunksize=8)):
                results.append(res)
                if progress and idx % 50 == 0:
                    print(f"  table {idx + 1}/{len(jobs)}", flush=True)
    else:
        for idx, job in enumerate(jobs):
            try:
                results.append(_build_entry(job))
            except Exception as exc:
                raise type(exc)(
                    f"table synthesis failed at v_x={job[4]} "
                    f"alpha_r={job[5]:+.4f}: {exc}") from exc

    entries = []
    it = iter(results)
    for _ in vx_grid:
        entries.append([TableEntry(*next(it)) for _ in alpha_grid])
    table = ScheduledTable(vp, env_f, env_r, cfg, vx_grid, alpha_grid, entries)
    if cache_path is not None:
        _save_table(table, cache_path)
    return table


def _save_table(table: ScheduledTable, path):
    arrays = {}
    for i, row in enumerate(table.entries):
        for j, e in enumerate(row):
            p = f"e{i}_{j}_"
            s = e.system
            arrays[p + "F"] = s.F
            arrays[p + "G"] = s.G
            arrays[p + "Hd"] = s.Hd
            arrays[p + "Ea"] = s.E_a
            arrays[p + "Eb"] = s.E_b
            arrays[p + "A"] = s.A
            arrays[p + "B"] = s.B
            arrays[p + "H"] = s.H
            arrays[p + "meta"] = np.array([s.T_s, s.v_x, s.alpha_r_hat, s.alpha_f_hat])
            arrays[p + "S"] = e.gains.S[0]
            arrays[p + "X"] = e.gains.X[0]
            arrays[p + "K"] = e.gains.K[0]
            arrays[p + "g"] = np.array([e.gains.epsilon, e.gains.Rbar[0],
                                        e.gains.horizon, e.gains.trace_reduced])
            arrays[p + "rho"] = e.margins.rho
            arrays[p + "c"] = e.margins.c
            arrays[p + "cons"] = np.r_[e.constraints.o,
                                       e.constraints.r_max,
                                       e.constraints.alpha_r_peak,
                                       e.constraints.F_yf_max,
                                       e.constraints.v_x]
    np.savez_compressed(path, **arrays)


def _load_table(path, vp, env_f, env_r, cfg, vx_grid, alpha_grid):
    data = np.load(path)
    mu = vp.front_tires.nominal.friction
    entries = []
    for i in range(vx_grid.size):
        row = []
        for j in range(alpha_grid.size):
            p = f"e{i}_{j}_"
            meta = data[p + "meta"]
            sys = UncertainAffineSystem(
                A=data[p + "A"], B=data[p + "B"], H=data[p + "H"],
                E_a=data[p + "Ea"], E_b=data[p + "Eb"],
                F=data[p + "F"], G=data[p + "G"], Hd=data[p + "Hd"],
                T_s=float(meta[0]), v_x=float(meta[1]),
                alpha_r_hat=float(meta[2]), alpha_f_hat=float(meta[3]))
            g = data[p + "g"]
            N = int(g[2])
            gains = GcGains(epsilon=float(g[0]), S=[data[p + "S"]] * (N + 1),
                            X=[data[p + "X"]] * (N + 1), K=[data[p + "K"]] * N,
                            Rbar=[float(g[1])] * N, horizon=N,
                            trace_reduced=float(g[3]))
            K = gains.K_stationary
            margins = MarginCoefficients(
                rho=data[p + "rho"], c=data[p + "c"],
                F_cl=sys.F - sys.G @ K, E1=sys.E_a - sys.E_b @ K, E1_k=[None] * N)
            cv = data[p + "cons"]
            base = build_constraints(vp, env_f, env_r, mu, float(meta[1]),
                                     yaw_limit_gravity=cfg.yaw_limit_gravity,
                                     conservative_slip=cfg.conservative_slip)
            cons = EnvelopeConstraints(
                M=base.M, N=base.N, o=cv[:6], r_max=float(cv[6]),
                alpha_r_peak=float(cv[7]), F_yf_max=float(cv[8]), v_x=float(cv[9]))
            row.append(TableEntry(sys, gains, margins, cons))
        entries.append(row)
    return ScheduledTable(vp, env_f, env_r, cfg, vx_grid, alpha_grid, entries)


@dataclass
class StepResult:
    F_yf_cmd: float
    delta_cmd: float
    status: str                 # optimal | infeasible | max_iter | fallback
    objective: float
    kkt_max: float
    margin_row_max: float       # largest margin as a fraction of its bound
    steering_clamped: bool
    solve_time_ms: float
    v_sequence: np.ndarray      # solved offsets (zeros under fallback)
    entry: tuple                # (i_vx, i_alpha)
    active_rows: int


def control_step(table: ScheduledTable, cfg: ControllerConfig, x, v_x,
                 warm_start=None) -> StepResult:
    """One receding-horizon control update at measured state x and speed v_x."""
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("state contains non-finite entries")
    t_start = time.perf_counter()
    vp = table.vehicle
    alpha_r = math.atan((x[3] - vp.dist_rear * x[4]) / v_x)
    i, j = table.lookup(v_x, alpha_r)
    entry = table.entries[i][j]
    cd = entry.condensed
    N = cfg.horizon

    # bounds at the exact measured speed; the rows themselves are fixed
    mu = vp.front_tires.nominal.friction
    slip_b, r_b, force_b, _ = constraint_bounds(
        vp, table.env_rear, mu, v_x,
        cfg.yaw_limit_gravity, cfg.conservative_slip)
    o = np.tile(np.array([slip_b, slip_b, r_b, r_b, force_b, force_b]), N)

    b = o - cd.C_rows @ x
    p_off = cd.E1F @ x
    cones = [(cd.cone_mats[jj], p_off[3 * jj:3 * jj + 3]) for jj in range(N - 1)]

    if cfg.margin_linearization:
        v_lin = np.zeros(N) if warm_start is None else np.asarray(warm_start, float)
        A_in = cd.A_rows.copy()
        b_lin = b.copy()
        for jj, (D, d) in enumerate(cones):
            r_vec = D @ v_lin + d
            t0 = np.linalg.norm(r_vec)
            g = D.T @ r_vec / t0 if t0 > 1e-12 else np.zeros(N)
            A_in += np.outer(cd.coupling[:, jj], g)
            b_lin -= cd.coupling[:, jj] * (t0 - g @ v_lin)
        prog = ConeProgram(P=cd.P_cost, q=np.zeros(N), A_in=A_in, b_in=b_lin)
    else:
        prog = ConeProgram(P=cd.P_cost, q=np.zeros(N), A_in=cd.A_rows, b_in=b,
                           cones=cones, coupling=cd.coupling)

    res = solve(prog, warm_start=warm_start)
    if res.status == "optimal":
        v_seq = res.z
        u = float(-cd.K @ x + v_seq[0])
        status = res.status
    else:
        # robustly stabilizing inner loop as the fallback law
        v_seq = np.zeros(N)
        u = float(-cd.K @ x)
        status = res.status

    delta, clamped = steering_from_force(vp, table.env_front, x, v_x, u)

    t_norms = np.array([np.linalg.norm(D @ v_seq + d) for D, d in cones])
    margin_abs = cd.coupling @ t_norms if t_norms.size else np.zeros(o.size)
    margin_frac = float((margin_abs / o).max(initial=0.0))
    slack = b - cd.A_rows @ v_seq - margin_abs
    active = int(np.sum(slack < 1e-6 * np.maximum(1.0, np.abs(o))))

    return StepResult(
        F_yf_cmd=u,
        delta_cmd=delta,
        status=status,
        objective=res.objective,
        kkt_max=res.kkt_max if res.status == "optimal" else math.inf,
        margin_row_max=margin_frac,
        steering_clamped=clamped,
        solve_time_ms=(time.perf_counter() - t_start) * 1e3,
        v_sequence=v_seq,
        entry=(i, j),
        active_rows=active,
    )


def steering_from_force(vp: VehicleParams, env_f: ForceEnvelope, x, v_x, F_yf):
    """Road-wheel angle realizing a front force at the current state.

    delta = atan((v_y + a r)/v_x) - inverse-mean-force(F_yf); the inversion
    is restricted to the monotone region of the mean curve and clamps
    (flagged) outside it.
    """
    if v_x <= 0:
        raise ValueError("longitudinal speed must be > 0")
    x = np.asarray(x, dtype=float).ravel()
    heading = math.atan((x[3] + vp.dist_front * x[4]) / v_x)
    try:
        alpha_f = inverse_mean_force(env_f, F_yf)
        clamped = False
    except ForceRangeError as err:
        alpha_f = err.clamped_alpha
        clamped = True
    return heading - alpha_f, clamped


def advance_reference(vp: VehicleParams, vy_ref, r_ref, delta_ref, v_x, t_s):
    """Advance the driver-reference states one step.

    Exact sample-and-hold of the linear bicycle at the current speed with
    the hand-wheel angle held over the step.
    """
    A_l, B_l = linear_bicycle(vp, v_x)
    M = np.zeros((3, 3))
    M[:2, :2] = A_l
    M[:2, 2:] = B_l
    E = expm(t_s * M)
    state = E[:2, :2] @ np.array([vy_ref, r_ref]) + E[:2, 2] * delta_ref
    return float(state[0]), float(state[1])
