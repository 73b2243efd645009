"""Kinematics of one planar nonholonomic mobile manipulator.

The robot is a differential-drive base (wheel radius r, axle half-width b)
carrying a 3-link planar arm mounted at a forward offset l_M from the axle
midpoint.  Generalized coordinates and reduced (actuation-space) coordinates:

    q    = (x_v, y_v, phi_v, q_m1, q_m2, q_m3)
    zeta = (q_R, q_L, q_m1, q_m2, q_m3)

with q_dot = blockdiag(H_v(phi_v), I_3) @ zeta_dot eliminating the no-slip
constraint A_v q_v_dot = 0, A_v = [sin phi_v, -cos phi_v, 0].

Lumped kinematic parameters (length 9, order fixed package-wide):

    theta_k = [ r/2, r/b, l_M r/b, l1 r/b, l2 r/b, l3 r/b, l1, l2, l3 ]

The end-effector twist is affine in theta_k:

    xdot_e = J_e(conf, theta_k) zeta_dot
           = Y_k(conf, zeta_dot) theta_k + passthrough(zeta_dot)

where the passthrough (0, 0, sum of arm joint rates) carries the arm's unit
contribution to the end-effector angular rate.  That coefficient is exactly 1
by construction (not a physical parameter), so it is kept outside the
regressor; every adaptive law consumes Y_k only through parameter
differences, for which the passthrough cancels identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

N_THETA_K = 9


@dataclass(frozen=True)
class RobotParams:
    """Physical parameters of one mobile manipulator (SI units)."""

    link_lengths: tuple[float, float, float]
    link_com_offsets: tuple[float, float, float]
    link_masses: tuple[float, float, float]
    link_inertias: tuple[float, float, float]
    base_mass: float
    base_inertia: float
    wheel_radius: float
    axle_half_width: float
    base_to_arm_offset: float

    def __post_init__(self):
        for l, lc in zip(self.link_lengths, self.link_com_offsets):
            if l <= 0 or lc <= 0 or lc > l:
                raise ValueError("need 0 < lc_k <= l_k")
        for v in (*self.link_masses, *self.link_inertias, self.base_mass,
                  self.base_inertia, self.wheel_radius, self.axle_half_width,
                  self.base_to_arm_offset):
            if v <= 0:
                raise ValueError("masses, inertias and lengths must be positive")


def paper_robot_params() -> RobotParams:
    """Parameter set used by all bundled scenarios (axle half-width 0.5 m)."""
    return RobotParams(
        link_lengths=(0.4, 0.285, 0.35),
        link_com_offsets=(0.28, 0.20, 0.25),
        link_masses=(6.5, 5.0, 2.6),
        link_inertias=(0.12, 0.42, 0.10),
        base_mass=10.0,
        base_inertia=1.0,
        wheel_radius=0.15,
        axle_half_width=0.5,
        base_to_arm_offset=0.5,
    )


@dataclass(frozen=True)
class GraspOffset:
    """Rigid offset from the task frame's operational point to grasp point i.

    r_ti is expressed in the task frame; phi_ti is the fixed relative
    orientation of end-effector i.  Both are constant after the grasp.
    """

    r_ti: tuple[float, float]
    phi_ti: float = 0.0


def absolute_angles(q: NDArray) -> NDArray:
    """Absolute body angles (base, link1..3): cumulative sums of phi_v, q_m."""
    return np.cumsum([q[2], q[3], q[4], q[5]])


def forward_kinematics(q: NDArray, params: RobotParams) -> NDArray:
    """End-effector pose (x_e, y_e, phi_e)."""
    a = absolute_angles(q)
    lengths = np.array([params.base_to_arm_offset, *params.link_lengths])
    x_e = q[0] + np.dot(lengths, np.cos(a))
    y_e = q[1] + np.dot(lengths, np.sin(a))
    return np.array([x_e, y_e, a[3]])


def h_matrix(phi_v: float, params: RobotParams) -> NDArray:
    """3x2 map from wheel rates (q_R_dot, q_L_dot) to base twist (Eq. 2 style)."""
    r, b = params.wheel_radius, params.axle_half_width
    c, s = np.cos(phi_v), np.sin(phi_v)
    return np.array([
        [r * c / 2.0, r * c / 2.0],
        [r * s / 2.0, r * s / 2.0],
        [r / b, -r / b],
    ])


def h_matrix_dot(phi_v: float, phi_v_dot: float, params: RobotParams) -> NDArray:
    r = params.wheel_radius
    c, s = np.cos(phi_v), np.sin(phi_v)
    return np.array([
        [-r * s * phi_v_dot / 2.0, -r * s * phi_v_dot / 2.0],
        [r * c * phi_v_dot / 2.0, r * c * phi_v_dot / 2.0],
        [0.0, 0.0],
    ])


def nonholonomic_row(phi_v: float) -> NDArray:
    """A_v such that A_v q_v_dot = 0 (no sideways wheel slip)."""
    return np.array([np.sin(phi_v), -np.cos(phi_v), 0.0])


def t_matrix(phi_v: float, params: RobotParams) -> NDArray:
    """6x5 map q_dot = T zeta_dot (H_v on the base block, identity on the arm)."""
    t = np.zeros((6, 5))
    t[:3, :2] = h_matrix(phi_v, params)
    t[3:, 2:] = np.eye(3)
    return t


def t_matrix_dot(phi_v: float, phi_v_dot: float, params: RobotParams) -> NDArray:
    td = np.zeros((6, 5))
    td[:3, :2] = h_matrix_dot(phi_v, phi_v_dot, params)
    return td


def true_theta_k(params: RobotParams) -> NDArray:
    """Lumped kinematic parameter vector for the physical robot."""
    r, b, lm = params.wheel_radius, params.axle_half_width, params.base_to_arm_offset
    l1, l2, l3 = params.link_lengths
    rb = r / b
    return np.array([r / 2.0, rb, lm * rb, l1 * rb, l2 * rb, l3 * rb, l1, l2, l3])


# --- Jacobian basis -------------------------------------------------------
#
# J_e(conf, theta_k) = J_pass + sum_k theta_k[k] * E_k(conf), with the
# constant passthrough J_pass placing 1s on the (phi_e_dot, arm-rate) slots.

_J_PASS = np.zeros((3, 5))
_J_PASS[2, 2:] = 1.0


def jacobian_passthrough() -> NDArray:
    return _J_PASS.copy()


def jacobian_basis(a: NDArray) -> NDArray:
    """(9, 3, 5) array E with J_e = J_pass + theta_k . E.

    ``a`` are the absolute body angles from :func:`absolute_angles`.
    """
    sa, ca = np.sin(a), np.cos(a)
    e = np.zeros((N_THETA_K, 3, 5))
    # r/2: translational push of the wheel mean rate along the heading
    e[0, 0, 0] = e[0, 0, 1] = ca[0]
    e[0, 1, 0] = e[0, 1, 1] = sa[0]
    # r/b: wheel differential -> base yaw -> end-effector yaw
    e[1, 2, 0], e[1, 2, 1] = 1.0, -1.0
    # l_M r/b and l_j r/b: yaw-induced sweep of the mount / link tips
    for k, n in zip((2, 3, 4, 5), (0, 1, 2, 3)):
        e[k, 0, 0], e[k, 0, 1] = -sa[n], sa[n]
        e[k, 1, 0], e[k, 1, 1] = ca[n], -ca[n]
    # l_j: sweep of link j by every arm joint at or below it
    for k, j in zip((6, 7, 8), (1, 2, 3)):
        for c in range(1, j + 1):
            e[k, 0, 1 + c] = -sa[j]
            e[k, 1, 1 + c] = ca[j]
    return e


def jacobian_basis_dot(a: NDArray, a_dot: NDArray) -> NDArray:
    """Time derivative of :func:`jacobian_basis` along body-angle rates."""
    sa, ca = np.sin(a), np.cos(a)
    dsa, dca = ca * a_dot, -sa * a_dot
    e = np.zeros((N_THETA_K, 3, 5))
    e[0, 0, 0] = e[0, 0, 1] = dca[0]
    e[0, 1, 0] = e[0, 1, 1] = dsa[0]
    for k, n in zip((2, 3, 4, 5), (0, 1, 2, 3)):
        e[k, 0, 0], e[k, 0, 1] = -dsa[n], dsa[n]
        e[k, 1, 0], e[k, 1, 1] = dca[n], -dca[n]
    for k, j in zip((6, 7, 8), (1, 2, 3)):
        for c in range(1, j + 1):
            e[k, 0, 1 + c] = -dsa[j]
            e[k, 1, 1 + c] = dca[j]
    return e


def _basis_from_trig(sa: NDArray, ca: NDArray, const: bool) -> NDArray:
    """Shared assembly of the Jacobian basis from (leading-batch) sin/cos.

    ``const`` includes the constant wheel-differential rows, which the time
    derivative of the basis drops.
    """
    e = np.zeros(sa.shape[:-1] + (N_THETA_K, 3, 5))
    e[..., 0, 0, 0] = e[..., 0, 0, 1] = ca[..., 0]
    e[..., 0, 1, 0] = e[..., 0, 1, 1] = sa[..., 0]
    if const:
        e[..., 1, 2, 0], e[..., 1, 2, 1] = 1.0, -1.0
    for k, n in zip((2, 3, 4, 5), (0, 1, 2, 3)):
        e[..., k, 0, 0], e[..., k, 0, 1] = -sa[..., n], sa[..., n]
        e[..., k, 1, 0], e[..., k, 1, 1] = ca[..., n], -ca[..., n]
    for k, j in zip((6, 7, 8), (1, 2, 3)):
        for c in range(1, j + 1):
            e[..., k, 0, 1 + c] = -sa[..., j]
            e[..., k, 1, 1 + c] = ca[..., j]
    return e


def jacobian_basis_batch(a: NDArray) -> NDArray:
    """(n, 9, 3, 5) Jacobian bases for a batch of absolute-angle rows."""
    return _basis_from_trig(np.sin(a), np.cos(a), const=True)


def jacobian_basis_dot_batch(a: NDArray, a_dot: NDArray) -> NDArray:
    """Batched time derivative of the Jacobian basis."""
    sa, ca = np.sin(a), np.cos(a)
    return _basis_from_trig(ca * a_dot, -sa * a_dot, const=False)


def reduced_jacobian(q: NDArray, theta_k: NDArray) -> NDArray:
    """3x5 reduced Jacobian J_e mapping zeta_dot to the end-effector twist."""
    e = jacobian_basis(absolute_angles(q))
    return _J_PASS + np.einsum("k,kij->ij", theta_k, e)


def reduced_jacobian_dot(q: NDArray, a_dot: NDArray, theta_k: NDArray) -> NDArray:
    """Time derivative of J_e given the absolute body-angle rates."""
    e = jacobian_basis_dot(absolute_angles(q), a_dot)
    return np.einsum("k,kij->ij", theta_k, e)


def body_angle_rates(zeta_dot: NDArray, theta_k: NDArray) -> NDArray:
    """Absolute body-angle rates (a_dot) from reduced rates.

    Uses the r/b entry of theta_k for the base yaw rate; arm rates pass
    through with unit coefficients.
    """
    phi_dot = theta_k[1] * (zeta_dot[0] - zeta_dot[1])
    return phi_dot + np.concatenate(([0.0], np.cumsum(zeta_dot[2:])))


def kinematic_passthrough(zeta_dot: NDArray) -> NDArray:
    """Known (parameter-free) part of the end-effector twist."""
    return np.array([0.0, 0.0, zeta_dot[2] + zeta_dot[3] + zeta_dot[4]])


def kinematic_regressor(q: NDArray, zeta_dot: NDArray) -> NDArray:
    """3x9 regressor Y_k with J_e zeta_dot = Y_k theta_k + passthrough."""
    e = jacobian_basis(absolute_angles(q))
    return np.einsum("kij,j->ik", e, zeta_dot)


def subtask_jacobian(phi_v: float, theta_k: NDArray) -> NDArray:
    """2x5 Jacobian of the base subtask coordinates (x_v, phi_v)."""
    c = np.cos(phi_v)
    return np.array([
        [theta_k[0] * c, theta_k[0] * c, 0.0, 0.0, 0.0],
        [theta_k[1], -theta_k[1], 0.0, 0.0, 0.0],
    ])


# --- singularity-robust inversion ----------------------------------------

def sr_pseudoinverse(j: NDArray, delta: float, lam_max: float) -> NDArray:
    """Damped pseudoinverse with exponentially shaped damping.

    Each singular value sigma is inverted as sigma/(sigma^2 + lam^2) with
    lam = lam_max * exp(-(sigma/delta)^2): full damping at singularities,
    negligible damping once sigma >> delta.
    """
    u, sig, vt = np.linalg.svd(j, full_matrices=False)
    out = np.zeros((j.shape[1], j.shape[0]))
    if sig.size == 0 or sig[0] == 0.0:
        return out
    keep = sig > 1e-12 * sig[0]
    lam = lam_max * np.exp(-((sig[keep] / delta) ** 2))
    coef = sig[keep] / (sig[keep] ** 2 + lam**2)
    return (vt[keep].T * coef) @ u[:, keep].T


def null_projector(j: NDArray, j_dagger: NDArray) -> NDArray:
    """N = I - J^+ J (projector onto the null space when J^+ is exact)."""
    return np.eye(j.shape[1]) - j_dagger @ j


# --- grasp transforms ------------------------------------------------------

def rot2(phi: float) -> NDArray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def grasp_transform(phi: float, offset: GraspOffset) -> NDArray:
    """Pose offset T = (R(phi) r_ti, phi_ti) from task pose to grasp pose."""
    p = rot2(phi) @ np.asarray(offset.r_ti)
    return np.array([p[0], p[1], offset.phi_ti])


def grasp_transform_rate(phi: float, omega: float, offset: GraspOffset) -> NDArray:
    """Time derivative of grasp_transform along phi(t) with rate omega."""
    p = rot2(phi) @ np.asarray(offset.r_ti)
    return np.array([-omega * p[1], omega * p[0], 0.0])


# --- inverse kinematics ----------------------------------------------------

def inverse_kinematics(target: NDArray, params: RobotParams,
                       base_heading: float | None = None) -> NDArray:
    """Place base and arm so the end-effector matches ``target`` exactly.

    The task is 3-dimensional and the robot has 5 DOF, so the base placement
    resolves the redundancy: the base heading defaults to the end-effector
    orientation and the base sits behind the wrist at the elbow-right-angle
    reach sqrt(l1^2 + l2^2), keeping the arm far from singularities.
    Elbow-up (q_m2 > 0) convention.
    """
    l1, l2, l3 = params.link_lengths
    phi_v = target[2] if base_heading is None else base_heading
    wrist = target[:2] - l3 * np.array([np.cos(target[2]), np.sin(target[2])])
    reach = np.hypot(l1, l2)
    p0 = wrist - reach * np.array([np.cos(phi_v), np.sin(phi_v)])
    base = p0 - params.base_to_arm_offset * np.array([np.cos(phi_v), np.sin(phi_v)])

    d = wrist - p0
    cos_q2 = (d @ d - l1**2 - l2**2) / (2.0 * l1 * l2)
    q2 = np.arccos(np.clip(cos_q2, -1.0, 1.0))  # elbow-up branch
    q1 = np.arctan2(d[1], d[0]) - phi_v - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    q3 = target[2] - phi_v - q1 - q2
    return np.array([base[0], base[1], phi_v, q1, q2, q3])
