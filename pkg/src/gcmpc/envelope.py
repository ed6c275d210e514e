"""Handling-envelope constraints: rear slip, yaw rate and front force bounds.

All six bounds are expressed in the common affine form  M x + N u <= o  on
the 6-state controller vector x = [v_y_ref, r_ref, delta_ref, v_y, r, 1] and
the front-force input u:

  rows 1-2:  +/- (v_y - b r) <= v_x tan(alpha_r_peak)   rear slip
  rows 3-4:  +/- r           <= r_max                    yaw rate
  rows 5-6:  +/- u           <= mu F_zf                  front force
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tires import ForceEnvelope
from .vehicle import VehicleParams, normal_loads

__all__ = ["EnvelopeConstraints", "max_yaw_rate", "build_constraints", "constraint_bounds"]


@dataclass(frozen=True)
class EnvelopeConstraints:
    M: np.ndarray            # 6x6
    N: np.ndarray            # 6x1
    o: np.ndarray            # 6, all entries > 0
    r_max: float             # rad/s
    alpha_r_peak: float      # rad
    F_yf_max: float          # N
    v_x: float               # m/s the bounds were evaluated at


def max_yaw_rate(vp: VehicleParams, mu, v_x, use_gravity=True):
    """Largest steady-state-holdable yaw rate [rad/s].

    mu*g/v_x scaled by a wheelbase shape factor.  ``use_gravity=False``
    drops the g factor, which produces dimensionally odd values two orders
    of magnitude smaller; it is kept only as a switch for comparison runs.
    """
    if v_x <= 0:
        raise ValueError("longitudinal speed must be > 0")
    a, b = vp.dist_front, vp.dist_rear
    shape = (a * b + max(a, b) ** 2) / (min(a, b) * (a + b))
    accel = mu * (vp.gravity if use_gravity else 1.0)
    return accel / v_x * shape


def constraint_bounds(vp: VehicleParams, env_r: ForceEnvelope, mu, v_x,
                      yaw_limit_gravity=True, conservative_slip=False):
    """The three envelope bound values at speed v_x.

    Returns (slip_bound [m/s], r_max [rad/s], force_bound [N]) together with
    the rear peak slip used.  The rear peak comes from the mean envelope
    curve by default; ``conservative_slip`` switches to the lower-bound
    curve's peak.
    """
    alpha_pk = env_r.peak_slip_inf if conservative_slip else env_r.peak_slip
    slip_bound = v_x * math.tan(alpha_pk)
    r_bound = max_yaw_rate(vp, mu, v_x, use_gravity=yaw_limit_gravity)
    fzf, _ = normal_loads(vp)
    force_bound = mu * fzf
    return slip_bound, r_bound, force_bound, alpha_pk


def build_constraints(vp: VehicleParams, env_f: ForceEnvelope, env_r: ForceEnvelope,
                      mu, v_x, *, yaw_limit_gravity=True,
                      conservative_slip=False) -> EnvelopeConstraints:
    """Assemble the stacked constraint triplet (M, N, o) at speed v_x."""
    if v_x <= 0:
        raise ValueError("longitudinal speed must be > 0")
    b = vp.dist_rear
    M = np.zeros((6, 6))
    M[0, 3], M[0, 4] = 1.0, -b
    M[1, 3], M[1, 4] = -1.0, b
    M[2, 4] = 1.0
    M[3, 4] = -1.0
    N = np.zeros((6, 1))
    N[4, 0] = 1.0
    N[5, 0] = -1.0
    slip_bound, r_bound, force_bound, alpha_pk = constraint_bounds(
        vp, env_r, mu, v_x, yaw_limit_gravity, conservative_slip)
    o = np.array([slip_bound, slip_bound, r_bound, r_bound, force_bound, force_bound])
    return EnvelopeConstraints(
        M=M, N=N, o=o, r_max=float(r_bound),
        alpha_r_peak=float(alpha_pk), F_yf_max=float(force_bound), v_x=float(v_x),
    )
