"""Brush-model tire lateral forces and their parametric uncertainty envelopes.

A tire is described by four physical parameters (cornering stiffness, static
friction, the dynamic/static friction ratio and the normal load).  The brush
model has a cubic unsaturated branch and a constant sliding plateau; sign
convention is positive slip -> negative lateral force.

Uncertainty is an interval box on (stiffness, friction ratio, friction).  The
envelope of the force curve over the box is computed by enumerating the 8 box
vertices on a slip-angle grid, which yields upper/lower bounding curves, their
midline ("mean force") and half-width ("force deviation"), plus the analogous
curves for the local cornering stiffness.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TireParams",
    "TireUncertaintySet",
    "ForceEnvelope",
    "ForceRangeError",
    "linear_force",
    "fiala_force",
    "local_stiffness",
    "peak_characteristics",
    "force_envelope",
    "inverse_mean_force",
    "envelope_to_csv",
]

DEFAULT_GRID_SPAN = 0.25    # rad, comfortably contains the force peak
DEFAULT_GRID_POINTS = 2001


class ForceRangeError(ValueError):
    """Requested force lies outside the monotone region of the mean curve.

    Carries the slip angle clamped to the nearest end of the monotone
    bracket so the caller can decide its own saturation policy.
    """

    def __init__(self, force, clamped_alpha):
        super().__init__(
            f"force {force:.6g} N outside the invertible (monotone) range; "
            f"clamped slip = {clamped_alpha:.6g} rad"
        )
        self.force = force
        self.clamped_alpha = clamped_alpha


@dataclass(frozen=True)
class TireParams:
    """Physical parameters of a single axle tire.

    cornering_stiffness : N/rad, > 0
    friction_ratio      : dynamic/static friction, in (0, 1.5)
    friction            : static friction coefficient, > 0
    normal_force        : N, > 0
    """

    cornering_stiffness: float
    friction_ratio: float
    friction: float
    normal_force: float

    def __post_init__(self):
        if self.cornering_stiffness <= 0:
            raise ValueError(f"cornering stiffness must be > 0, got {self.cornering_stiffness}")
        if self.normal_force <= 0:
            raise ValueError(f"normal force must be > 0, got {self.normal_force}")
        if self.friction <= 0:
            raise ValueError(f"friction must be > 0, got {self.friction}")
        if not 0.0 < self.friction_ratio < 1.5:
            raise ValueError(
                f"friction ratio must lie in (0, 1.5) so 1 - (2/3)*ratio stays "
                f"positive, got {self.friction_ratio}"
            )

    @property
    def slide_slip(self):
        """Slip angle beyond which the whole contact patch slides [rad]."""
        return math.atan(3.0 * self.friction * self.normal_force / self.cornering_stiffness)


@dataclass(frozen=True)
class TireUncertaintySet:
    """Interval box of tire parameters around a nominal tire.

    rel_bounds are symmetric relative half-widths for
    (cornering_stiffness, friction_ratio, friction), each in [0, 1).
    """

    nominal: TireParams
    rel_bounds: tuple[float, float, float]

    def __post_init__(self):
        for name, b in zip(("stiffness", "friction_ratio", "friction"), self.rel_bounds):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"relative bound for {name} must be in [0, 1), got {b}")
        # constructing the vertices validates every corner of the box
        self.vertices()

    def vertices(self) -> list[TireParams]:
        """The 8 corner tires of the box, in a fixed deterministic order."""
        n = self.nominal
        dc, dr, dm = self.rel_bounds
        out = []
        for sc, sr, sm in itertools.product((-1.0, 1.0), repeat=3):
            out.append(
                TireParams(
                    cornering_stiffness=n.cornering_stiffness * (1.0 + sc * dc),
                    friction_ratio=n.friction_ratio * (1.0 + sr * dr),
                    friction=n.friction * (1.0 + sm * dm),
                    normal_force=n.normal_force,
                )
            )
        return out

    def sample(self, rng: np.random.Generator) -> TireParams:
        """Draw a tire uniformly from the box."""
        n = self.nominal
        dc, dr, dm = self.rel_bounds
        u = rng.uniform(-1.0, 1.0, size=3)
        return TireParams(
            cornering_stiffness=n.cornering_stiffness * (1.0 + u[0] * dc),
            friction_ratio=n.friction_ratio * (1.0 + u[1] * dr),
            friction=n.friction * (1.0 + u[2] * dm),
            normal_force=n.normal_force,
        )


def linear_force(stiffness, alpha):
    """Small-slip linear lateral force: -stiffness * alpha  [N]."""
    if stiffness <= 0:
        raise ValueError("stiffness must be > 0")
    return -stiffness * alpha


def fiala_force(p: TireParams, alpha):
    """Brush-model lateral force [N] at slip angle(s) alpha [rad].

    Accepts a scalar or an ndarray.  Cubic branch up to the full-slide
    angle atan(3*mu*Fz/C), constant plateau -sign(alpha)*mu*ratio*Fz beyond.
    """
    a = np.asarray(alpha, dtype=float)
    if np.any(np.abs(a) >= np.pi / 2):
        raise ValueError("slip angle must satisfy |alpha| < pi/2")
    C = p.cornering_stiffness
    mu_fz = p.friction * p.normal_force
    r = p.friction_ratio
    f = C * np.tan(a)
    unsat = (
        -f
        + (2.0 - r) / (3.0 * mu_fz) * np.abs(f) * f
        - (1.0 - 2.0 * r / 3.0) / (9.0 * mu_fz * mu_fz) * f ** 3
    )
    sat = -np.sign(a) * mu_fz * r
    out = np.where(np.abs(a) <= p.slide_slip, unsat, sat)
    return float(out) if np.isscalar(alpha) else out


def fiala_force_scalar(C, ratio, mu, fz, alpha):
    """Scalar fast path of :func:`fiala_force` (pure math, no numpy).

    Used in the plant integration loop where per-call overhead matters.
    """
    mu_fz = mu * fz
    if abs(alpha) > math.atan(3.0 * mu_fz / C):
        return -math.copysign(mu_fz * ratio, alpha)
    f = C * math.tan(alpha)
    return (
        -f
        + (2.0 - ratio) / (3.0 * mu_fz) * abs(f) * f
        - (1.0 - 2.0 * ratio / 3.0) / (9.0 * mu_fz * mu_fz) * f ** 3
    )


def local_stiffness(p: TireParams, alpha):
    """Local cornering stiffness -dF/dalpha [N/rad], analytic.

    Zero on the sliding plateau.  At alpha = 0 this equals the nominal
    cornering stiffness.
    """
    a = np.asarray(alpha, dtype=float)
    if np.any(np.abs(a) >= np.pi / 2):
        raise ValueError("slip angle must satisfy |alpha| < pi/2")
    C = p.cornering_stiffness
    mu_fz = p.friction * p.normal_force
    r = p.friction_ratio
    t = np.tan(a)
    f = C * t
    fprime = C * (1.0 + t * t)
    s = fprime * (
        1.0
        - 2.0 * (2.0 - r) / (3.0 * mu_fz) * np.abs(f)
        + (1.0 - 2.0 * r / 3.0) / (3.0 * mu_fz * mu_fz) * f * f
    )
    out = np.where(np.abs(a) <= p.slide_slip, s, 0.0)
    return float(out) if np.isscalar(alpha) else out


def peak_characteristics(p: TireParams):
    """Peak of the force curve.

    Returns (q, peak_force, peak_slip) where q = 1/(1 - (2/3)*ratio),
    peak_slip = atan(q*mu*Fz/C) and peak_force is the (negative) force at
    +peak_slip.  For friction ratios >= 1 the curve has no interior
    extremum and the peak value equals the sliding plateau.
    """
    denom = 1.0 - 2.0 * p.friction_ratio / 3.0
    if denom <= 0:
        raise ValueError("friction ratio >= 1.5 makes the q denominator non-positive")
    q = 1.0 / denom
    peak_slip = math.atan(q * p.friction * p.normal_force / p.cornering_stiffness)
    peak_force = fiala_force_scalar(
        p.cornering_stiffness, p.friction_ratio, p.friction, p.normal_force, peak_slip
    )
    return q, peak_force, peak_slip


@dataclass(frozen=True)
class ForceEnvelope:
    """Force bounds of a tire uncertainty box on a slip-angle grid.

    All curves are stored on ``alpha`` and evaluated by linear interpolation
    (queries outside the grid clamp to the end values).  ``peak_slip`` and
    ``peak_force`` refer to the peak of the mean curve; the mean curve is
    strictly monotone decreasing on [-peak_slip, +peak_slip].
    """

    source: TireUncertaintySet
    alpha: np.ndarray        # grid [rad], symmetric about 0, increasing
    f_sup: np.ndarray        # upper bounding force [N]
    f_inf: np.ndarray        # lower bounding force [N]
    f_mean: np.ndarray       # (f_sup + f_inf)/2 [N]
    f_dev: np.ndarray        # (f_sup - f_inf)/2 [N], >= 0
    c_mean: np.ndarray       # mean local stiffness [N/rad]
    c_dev: np.ndarray        # stiffness half-spread [N/rad], >= 0
    peak_slip: float
    peak_force: float
    # smallest per-vertex peak slip: the earliest-saturating tire in the box
    peak_slip_inf: float = field(default=0.0)

    def F_sup(self, a):
        return np.interp(a, self.alpha, self.f_sup)

    def F_inf(self, a):
        return np.interp(a, self.alpha, self.f_inf)

    def F_mean(self, a):
        return np.interp(a, self.alpha, self.f_mean)

    def dF(self, a):
        return np.interp(a, self.alpha, self.f_dev)

    def C_mean(self, a):
        return np.interp(a, self.alpha, self.c_mean)

    def dC(self, a):
        return np.interp(a, self.alpha, self.c_dev)

    def input_uncertainty_ratio(self, a):
        """Relative force deviation dF/|F_mean| at slip a.

        Near zero slip both curves vanish; the limit dC(0)/C_mean(0) is used
        there.
        """
        fm = self.F_mean(a)
        if abs(fm) < 1e-9 * abs(self.peak_force):
            return self.dC(0.0) / self.C_mean(0.0)
        return self.dF(a) / abs(fm)


def force_envelope(
    w: TireUncertaintySet,
    alpha_grid: np.ndarray | None = None,
) -> ForceEnvelope:
    """Build the vertex-enumeration force envelope of an uncertainty box.

    The extrema over the box are taken pointwise over the 8 vertices; the
    stiffness curves use the analytically differentiated force per vertex
    rather than differencing the force envelope.
    """
    if alpha_grid is None:
        alpha_grid = np.linspace(-DEFAULT_GRID_SPAN, DEFAULT_GRID_SPAN, DEFAULT_GRID_POINTS)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if alpha_grid.size < 3:
        raise ValueError("slip grid must have at least 3 points")
    if np.any(np.diff(alpha_grid) <= 0):
        raise ValueError("slip grid must be strictly increasing")
    if abs(alpha_grid[0] + alpha_grid[-1]) > 1e-12:
        raise ValueError("slip grid must be symmetric about zero")

    verts = w.vertices()
    forces = np.array([fiala_force(v, alpha_grid) for v in verts])
    stiffs = np.array([local_stiffness(v, alpha_grid) for v in verts])

    f_sup = forces.max(axis=0)
    f_inf = forces.min(axis=0)
    f_mean = 0.5 * (f_sup + f_inf)
    f_dev = 0.5 * (f_sup - f_inf)
    c_sup = stiffs.max(axis=0)
    c_inf = stiffs.min(axis=0)
    c_mean = 0.5 * (c_sup + c_inf)
    c_dev = 0.5 * (c_sup - c_inf)

    ipk = int(np.argmin(f_mean))          # most negative force, positive slip side
    peak_slip_inf = min(peak_characteristics(v)[2] for v in verts)
    return ForceEnvelope(
        source=w,
        alpha=alpha_grid,
        f_sup=f_sup,
        f_inf=f_inf,
        f_mean=f_mean,
        f_dev=f_dev,
        c_mean=c_mean,
        c_dev=c_dev,
        peak_slip=float(alpha_grid[ipk]),
        peak_force=float(f_mean[ipk]),
        peak_slip_inf=float(peak_slip_inf),
    )


def inverse_mean_force(env: ForceEnvelope, force, tol=1e-9):
    """Invert the mean force curve on its monotone bracket.

    Returns the unique slip angle in [-peak_slip, +peak_slip] whose mean
    force equals ``force``, found by bisection to ``tol`` radians.  Raises
    :class:`ForceRangeError` (carrying the clamped slip) when the force is
    outside the monotone range.
    """
    lo, hi = -env.peak_slip, env.peak_slip
    f_hi = env.F_mean(lo)   # largest (positive) force at negative slip
    f_lo = env.F_mean(hi)
    if force > f_hi:
        raise ForceRangeError(force, lo)
    if force < f_lo:
        raise ForceRangeError(force, hi)
    # mean force decreases from f_hi to f_lo on [lo, hi]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if env.F_mean(mid) >= force:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def envelope_to_csv(env: ForceEnvelope, path):
    """Write the envelope curves as CSV: alpha,F_inf,F_bar,F_sup,dF,C_bar,dC."""
    with open(path, "w") as fh:
        fh.write("alpha,F_inf,F_bar,F_sup,dF,C_bar,dC\n")
        for i in range(env.alpha.size):
            row = (env.alpha[i], env.f_inf[i], env.f_mean[i], env.f_sup[i],
                   env.f_dev[i], env.c_mean[i], env.c_dev[i])
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
