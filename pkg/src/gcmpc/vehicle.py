"""Planar bicycle vehicle models and their uncertain, discretized forms.

Three nested models of the lateral dynamics (states: lateral velocity v_y and
yaw rate r):

* linear bicycle        -- linear tires front and rear, steering input,
                           used as the driver-reference model;
* affine force input    -- front lateral force as the input, rear force
                           linearized about a slip operating point;
* uncertain AFI         -- the same with the tire envelope deviations routed
                           through a norm-bounded multiplicative uncertainty
                           channel  x' = (A + H D Ea) x + (B + H D Eb) u + ...

The controller works on a 6-state augmentation
x = [v_y_ref, r_ref, delta_ref, v_y, r, 1]: reference bicycle driven by the
hand-wheel angle, uncertain AFI plant, and a constant one absorbing the
affine terms.  The hand-wheel state and the constant are held exactly
(their continuous rows are zero, so the discrete transition keeps them).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .tires import ForceEnvelope, TireUncertaintySet

__all__ = [
    "VehicleParams",
    "UncertainAffineSystem",
    "normal_loads",
    "linear_bicycle",
    "afi_matrices",
    "uncertain_afi",
    "augmented_system",
]

NX = 6      # augmented state dimension
IDX_VY_REF, IDX_R_REF, IDX_DELTA_REF, IDX_VY, IDX_R, IDX_ONE = range(NX)
HELD_STATES = (IDX_DELTA_REF, IDX_ONE)   # constant between controller updates


@dataclass(frozen=True)
class VehicleParams:
    """Chassis parameters plus front/rear tire uncertainty boxes.

    mass        : kg
    yaw_inertia : kg m^2
    dist_front  : m, front axle to center of gravity
    dist_rear   : m, rear axle to center of gravity
    """

    mass: float
    yaw_inertia: float
    dist_front: float
    dist_rear: float
    front_tires: TireUncertaintySet
    rear_tires: TireUncertaintySet
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "dist_front", "dist_rear"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        fzf, fzr = normal_loads(self)
        for name, want, have in (
            ("front", fzf, self.front_tires.nominal.normal_force),
            ("rear", fzr, self.rear_tires.nominal.normal_force),
        ):
            if abs(want - have) > 1e-6 * want:
                raise ValueError(
                    f"{name} tire normal force {have:.2f} N inconsistent with the "
                    f"static load split {want:.2f} N (loads must sum to m*g)"
                )


def normal_loads(vp: VehicleParams):
    """Static axle loads (F_zf, F_zr) [N] from the wheelbase split."""
    wheelbase = vp.dist_front + vp.dist_rear
    fzf = vp.mass * vp.gravity * vp.dist_rear / wheelbase
    fzr = vp.mass * vp.gravity * vp.dist_front / wheelbase
    return fzf, fzr


def linear_bicycle(vp: VehicleParams, v_x):
    """Continuous linear bicycle (A_l 2x2, B_l 2x1), steering input [rad].

    Uses the nominal cornering stiffnesses; valid for small slip angles.
    """
    if v_x <= 0:
        raise ValueError("longitudinal speed must be > 0")
    cf = vp.front_tires.nominal.cornering_stiffness
    cr = vp.rear_tires.nominal.cornering_stiffness
    m, iz, a, b = vp.mass, vp.yaw_inertia, vp.dist_front, vp.dist_rear
    A = np.array([
        [-(cf + cr) / (m * v_x), -(a * cf - b * cr) / (m * v_x) - v_x],
        [-(a * cf - b * cr) / (iz * v_x), -(a * a * cf + b * b * cr) / (iz * v_x)],
    ])
    B = np.array([[cf / m], [a * cf / iz]])
    return A, B


def afi_matrices(vp: VehicleParams, env_r: ForceEnvelope, v_x, alpha_r_hat):
    """Affine-force-input bicycle about rear slip alpha_r_hat.

    Returns (A_afi 2x2, B_afi 2x1, c_afi 2x1) with the rear force replaced by
    its first-order expansion F_mean(a_hat) - (a - a_hat) C_mean(a_hat) and
    the front lateral force [N] as the input.
    """
    if v_x <= 0:
        raise ValueError("longitudinal speed must be > 0")
    m, iz, a, b = vp.mass, vp.yaw_inertia, vp.dist_front, vp.dist_rear
    cr = float(env_r.C_mean(alpha_r_hat))
    fr = float(env_r.F_mean(alpha_r_hat))
    A = np.array([
        [-cr / (m * v_x), b * cr / (m * v_x) - v_x],
        [b * cr / (iz * v_x), -b * b * cr / (iz * v_x)],
    ])
    B = np.array([[1.0 / m], [a / iz]])
    affine = fr + cr * alpha_r_hat
    c = np.array([[affine / m], [-b * affine / iz]])
    return A, B, c


def uncertain_afi(vp: VehicleParams, env_f: ForceEnvelope, env_r: ForceEnvelope,
                  v_x, alpha_r_hat, alpha_f_hat):
    """Uncertainty channel of the AFI model.

    Returns (H 2x2, E_a 3x2, E_b 3x1, E_c 3x1) such that the true dynamics
    lie in  x' = (A + H D E_a) x + (B + H D E_b) u + (c + H D E_c)  for some
    structured D with entries bounded by one: row 1 of E carries the rear
    stiffness deviation, row 2 the rear force deviation and row 3 the
    relative front force deviation scaling the input.
    """
    if v_x <= 0:
        raise ValueError("longitudinal speed must be > 0")
    m, iz, a, b = vp.mass, vp.yaw_inertia, vp.dist_front, vp.dist_rear
    dcr = float(env_r.dC(alpha_r_hat))
    dfr = float(env_r.dF(alpha_r_hat))
    H = np.array([[1.0 / m, 1.0 / m], [-b / iz, a / iz]])
    E_a = np.array([
        [-dcr / v_x, b * dcr / v_x],
        [0.0, 0.0],
        [0.0, 0.0],
    ])
    E_c = np.array([[dcr * alpha_r_hat], [dfr], [0.0]])
    # input deviation is kept relative so it scales the force command
    rel = float(env_f.input_uncertainty_ratio(alpha_f_hat))
    E_b = np.array([[0.0], [0.0], [rel]])
    return H, E_a, E_b, E_c


@dataclass(frozen=True)
class UncertainAffineSystem:
    """Augmented 6-state uncertain system, continuous and discretized.

    Continuous:  dx = A x + B u + H w,  w = D (E_a x + E_b u), |D| bounded.
    Discrete:    x+ = F x + G u + Hd w  (exact sample-and-hold of (A, B, H)).
    """

    A: np.ndarray          # 6x6, rows for delta_ref and the constant are zero
    B: np.ndarray          # 6x1
    H: np.ndarray          # 6x2
    E_a: np.ndarray        # 3x6, first three columns zero
    E_b: np.ndarray        # 3x1
    F: np.ndarray          # 6x6
    G: np.ndarray          # 6x1
    Hd: np.ndarray         # 6x2
    T_s: float
    v_x: float
    alpha_r_hat: float
    alpha_f_hat: float


def discretize_with_disturbance(A, B, H, T_s):
    """Exact discretization of dx = A x + B u + H w with u, w held over T_s.

    Block matrix exponential of [[A, B, H], [0, 0, 0]]; returns (F, G, Hd).
    """
    n = A.shape[0]
    nu = B.shape[1]
    nw = H.shape[1]
    big = np.zeros((n + nu + nw, n + nu + nw))
    big[:n, :n] = A
    big[:n, n:n + nu] = B
    big[:n, n + nu:] = H
    E = expm(T_s * big)
    return E[:n, :n], E[:n, n:n + nu], E[:n, n + nu:]


def augmented_system(vp: VehicleParams, env_f: ForceEnvelope, env_r: ForceEnvelope,
                     v_x, alpha_r_hat, alpha_f_hat, T_s) -> UncertainAffineSystem:
    """Assemble and discretize the 6-state reference + uncertain plant system."""
    if T_s <= 0:
        raise ValueError("sampling time must be > 0")
    A_l, B_l = linear_bicycle(vp, v_x)
    A_afi, B_afi, c_afi = afi_matrices(vp, env_r, v_x, alpha_r_hat)
    H_afi, Ea_afi, Eb_afi, Ec_afi = uncertain_afi(
        vp, env_f, env_r, v_x, alpha_r_hat, alpha_f_hat)

    A = np.zeros((NX, NX))
    A[0:2, 0:2] = A_l
    A[0:2, 2:3] = B_l
    A[3:5, 3:5] = A_afi
    A[3:5, 5:6] = c_afi
    # hand-wheel reference and the constant state are externally held

    B = np.zeros((NX, 1))
    B[3:5] = B_afi
    H = np.zeros((NX, 2))
    H[3:5] = H_afi
    E_a = np.zeros((3, NX))
    E_a[:, 3:5] = Ea_afi
    E_a[:, 5:6] = Ec_afi

    F, G, Hd = discretize_with_disturbance(A, B, H, T_s)
    # the held rows are identities exactly, not merely to solver precision
    for i in HELD_STATES:
        F[i, :] = 0.0
        F[i, i] = 1.0
        G[i, :] = 0.0
        Hd[i, :] = 0.0

    return UncertainAffineSystem(
        A=A, B=B, H=H, E_a=E_a, E_b=Eb_afi, F=F, G=G, Hd=Hd,
        T_s=float(T_s), v_x=float(v_x),
        alpha_r_hat=float(alpha_r_hat), alpha_f_hat=float(alpha_f_hat),
    )
