"""Dynamics of the mobile manipulators, the object, and their coupling.

Joint-space model
-----------------
Every rigid body of the robot (base + three links) has its COM at

    p_body = (x_v, y_v) + sum_n rho_n * (cos a_n, sin a_n)

where a = (phi_v, phi_v+q1, phi_v+q1+q2, phi_v+q1+q2+q3) are the absolute
body angles and rho are fixed chain offsets.  Kinetic energy is therefore a
quadratic form whose mass matrix is *linear* in 15 lumped inertial
coefficients:

    theta_r = [ m_tot,
                h_0..h_3      (first moments per absolute angle),
                kap_0..kap_3  (second moments + rotor inertias per angle),
                k_01 k_02 k_03 k_12 k_13 k_23 (angle-pair couplings) ]

C matrices come from Christoffel symbols of the first kind, which makes
Mdot - 2C skew-symmetric by construction (the passivity property the
adaptive design relies on).  Gravity is zero: all motion is in the
horizontal plane.

Dynamic regressor
-----------------
The synthesized (robot + weighted object share) dynamics evaluated on
reference signals is linear in a lumped parameter vector theta_d.  Because
the reduction map T(phi_v) contains r/2 and r/b, and the object coupling
contains the end-effector Jacobian, theta_d holds products of inertial
parameters with kinematic monomials.  The lumping here is deliberately
redundant (590 entries) rather than minimal: the adaptive laws only need
*some* exact linear parametrization, and the reconstruction identity is the
acceptance gate, not the parameter count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from coopnmm.kinematics import (
    GraspOffset,
    RobotParams,
    absolute_angles,
    h_matrix,
    h_matrix_dot,
    jacobian_basis,
    jacobian_basis_dot,
    jacobian_passthrough,
    rot2,
)

N_THETA_R = 15
# lower-triangular chain matrix: body angle n moves with angle coordinate j<=n
_W_A = np.tril(np.ones((4, 4)))
_OFFDIAG = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _build_basis_statics():
    """Constant tensors so the trig-dependent bases are single contractions.

    mass_basis(a)  = mass_features(a)  . _MB_STATIC   (features: 1, sin a,
    cos a, cos of the six angle differences)
    dmass_basis(a) = dmass_features(a) . _DB_STATIC   (features: cos a,
    sin a, sin of the angle differences)
    """
    mb = np.zeros((15, N_THETA_R, 6, 6))
    mb[0, 0, 0, 0] = mb[0, 0, 1, 1] = 1.0
    db = np.zeros((14, N_THETA_R, 4, 6, 6))
    for n in range(4):
        mb[0, 5 + n, 2:, 2:] = np.outer(_W_A[n], _W_A[n])
        mb[1 + n, 1 + n, 0, 2:] = -_W_A[n]
        mb[1 + n, 1 + n, 2:, 0] = -_W_A[n]
        mb[5 + n, 1 + n, 1, 2:] = _W_A[n]
        mb[5 + n, 1 + n, 2:, 1] = _W_A[n]
        for l in range(4):
            if _W_A[n, l]:
                db[n, 1 + n, l, 0, 2:] = -_W_A[n]
                db[n, 1 + n, l, 2:, 0] = -_W_A[n]
                db[4 + n, 1 + n, l, 1, 2:] = -_W_A[n]
                db[4 + n, 1 + n, l, 2:, 1] = -_W_A[n]
    for p, (n, m) in enumerate(_OFFDIAG):
        sym = np.outer(_W_A[n], _W_A[m]) + np.outer(_W_A[m], _W_A[n])
        mb[9 + p, 9 + p, 2:, 2:] = sym
        for l in range(4):
            fac = -(_W_A[n, l] - _W_A[m, l])
            if fac:
                db[8 + p, 9 + p, l, 2:, 2:] = fac * sym
    return mb, db


_MB_STATIC, _DB_STATIC = _build_basis_statics()
_DIFF_N = np.array([n for n, _ in _OFFDIAG])
_DIFF_M = np.array([m for _, m in _OFFDIAG])


def _mass_features(a: NDArray) -> NDArray:
    d = a[_DIFF_N] - a[_DIFF_M]
    return np.concatenate(([1.0], np.sin(a), np.cos(a), np.cos(d)))


def _dmass_features(a: NDArray) -> NDArray:
    d = a[_DIFF_N] - a[_DIFF_M]
    return np.concatenate((np.cos(a), np.sin(a), np.sin(d)))


def true_theta_r(params: RobotParams) -> NDArray:
    """Lumped inertial coefficients of the physical robot."""
    lm = params.base_to_arm_offset
    l1, l2, _ = params.link_lengths
    # per body: mass, chain offsets rho (per absolute angle), own angle, inertia
    bodies = [
        (params.base_mass, np.zeros(4), 0, params.base_inertia),
        (params.link_masses[0], np.array([lm, params.link_com_offsets[0], 0, 0]), 1,
         params.link_inertias[0]),
        (params.link_masses[1], np.array([lm, l1, params.link_com_offsets[1], 0]), 2,
         params.link_inertias[1]),
        (params.link_masses[2], np.array([lm, l1, l2, params.link_com_offsets[2]]), 3,
         params.link_inertias[2]),
    ]
    theta = np.zeros(N_THETA_R)
    for m, rho, ang, inertia in bodies:
        theta[0] += m
        theta[1:5] += m * rho
        theta[5:9] += m * rho**2
        theta[5 + ang] += inertia
        for p, (n, np_) in enumerate(_OFFDIAG):
            theta[9 + p] += m * rho[n] * rho[np_]
    return theta


def mass_basis(a: NDArray) -> NDArray:
    """(15, 6, 6) basis with M(q) = theta_r . mass_basis(angles)."""
    return np.tensordot(_mass_features(a), _MB_STATIC, axes=1)


def dmass_basis(a: NDArray) -> NDArray:
    """(15, 4, 6, 6) basis of dM/dq over the four angle coordinates."""
    return np.tensordot(_dmass_features(a), _DB_STATIC, axes=1)


def christoffel(dm: NDArray, q_dot: NDArray) -> NDArray:
    """C(q, q_dot) from dM/dq stacks; supports leading batch dimensions.

    dm[..., l, i, j] = dM_ij/dq_(2+l).  C is defined so that
    C_ij = 1/2 sum_l (dM_ij/dq_l + dM_il/dq_j - dM_jl/dq_i) q_dot_l,
    which yields skew-symmetric Mdot - 2C.
    """
    t1 = np.einsum("...aij,...a->...ij", dm, q_dot[..., 2:])
    t2b = np.einsum("...ail,...l->...ia", dm, q_dot)
    t2 = np.zeros(dm.shape[:-3] + (6, 6))
    t2[..., :, 2:] = t2b
    return 0.5 * (t1 + t2 - np.swapaxes(t2, -1, -2))


@lru_cache(maxsize=16)
def _contracted_bases(params: RobotParams):
    """Basis tensors pre-contracted with the robot's true theta_r."""
    th = true_theta_r(params)
    return (np.einsum("k,fkij->fij", th, _MB_STATIC),
            np.einsum("k,fkaij->faij", th, _DB_STATIC))


def joint_dynamics(q: NDArray, q_dot: NDArray, params: RobotParams):
    """(M, C, G) of the full 6-coordinate model. G = 0 (horizontal plane)."""
    a = absolute_angles(q)
    mbt, dbt = _contracted_bases(params)
    m = np.tensordot(_mass_features(a), mbt, axes=1)
    dm = np.tensordot(_dmass_features(a), dbt, axes=1)
    c = christoffel(dm, q_dot)
    return m, c, np.zeros(6)


def input_map(phi_v: float, params: RobotParams) -> NDArray:
    """6x5 map from actuation torques to generalized forces.

    Wheel torques act through the rolling contact; arm torques directly.
    Together with the reduction this gives B_r = T^T B = I_5 (reduced
    coordinates coincide with the actuation space).
    """
    r, b = params.wheel_radius, params.axle_half_width
    c, s = np.cos(phi_v), np.sin(phi_v)
    bm = np.zeros((6, 5))
    bm[0, 0] = bm[0, 1] = c / r
    bm[1, 0] = bm[1, 1] = s / r
    bm[2, 0], bm[2, 1] = b / (2.0 * r), -b / (2.0 * r)
    bm[3:, 2:] = np.eye(3)
    return bm


def reduce_dynamics(m: NDArray, c: NDArray, g: NDArray, b: NDArray,
                    h_v: NDArray, h_v_dot: NDArray):
    """Eliminate the nonholonomic constraint: 5-dim actuation-space model."""
    t = np.zeros((6, 5))
    t[:3, :2] = h_v
    t[3:, 2:] = np.eye(3)
    t_dot = np.zeros((6, 5))
    t_dot[:3, :2] = h_v_dot
    m_r = t.T @ m @ t
    c_r = t.T @ (c @ t + m @ t_dot)
    g_r = t.T @ g
    b_r = t.T @ b
    return m_r, c_r, g_r, b_r


@lru_cache(maxsize=16)
def _stacked_bases(params_key: tuple):
    """(n, 15, 36) and (n, 14, 144) contracted bases for a robot team."""
    mbt = np.stack([_contracted_bases(p)[0].reshape(N_THETA_R, 36)
                    for p in params_key])
    dbt = np.stack([_contracted_bases(p)[1].reshape(14, 144)
                    for p in params_key])
    return mbt, dbt


def batched_reduced_dynamics(qs: NDArray, zeta_dots: NDArray,
                             params_list: list[RobotParams]):
    """(M_r (n,5,5), C_r (n,5,5)) for a team in one vectorized pass."""
    qs = np.asarray(qs)
    zds = np.asarray(zeta_dots)
    n = qs.shape[0]
    a = np.cumsum(qs[:, 2:], axis=1)
    d = a[:, _DIFF_N] - a[:, _DIFF_M]
    sa, ca = np.sin(a), np.cos(a)
    mf = np.concatenate([np.ones((n, 1)), sa, ca, np.cos(d)], axis=1)
    df = np.concatenate([ca, sa, np.sin(d)], axis=1)
    mbt, dbt = _stacked_bases(tuple(params_list))
    m = np.einsum("nf,nfx->nx", mf, mbt).reshape(n, 6, 6)
    dm = np.einsum("nf,nfx->nx", df, dbt).reshape(n, 4, 6, 6)

    r = np.array([p.wheel_radius for p in params_list])
    b = np.array([p.axle_half_width for p in params_list])
    c0, s0 = np.cos(qs[:, 2]), np.sin(qs[:, 2])
    wsum = zds[:, 0] + zds[:, 1]
    phid = r / b * (zds[:, 0] - zds[:, 1])
    q_dot = np.empty((n, 6))
    q_dot[:, 0] = 0.5 * r * c0 * wsum
    q_dot[:, 1] = 0.5 * r * s0 * wsum
    q_dot[:, 2] = phid
    q_dot[:, 3:] = zds[:, 2:]
    c = christoffel(dm, q_dot)

    t = np.zeros((n, 6, 5))
    t[:, 0, 0] = t[:, 0, 1] = 0.5 * r * c0
    t[:, 1, 0] = t[:, 1, 1] = 0.5 * r * s0
    t[:, 2, 0], t[:, 2, 1] = r / b, -r / b
    t[:, 3:, 2:] = np.eye(3)
    td = np.zeros((n, 6, 5))
    td[:, 0, 0] = td[:, 0, 1] = -0.5 * r * s0 * phid
    td[:, 1, 0] = td[:, 1, 1] = 0.5 * r * c0 * phid
    tT = t.transpose(0, 2, 1)
    return tT @ m @ t, tT @ (c @ t + m @ td)


def reduced_dynamics(q: NDArray, zeta_dot: NDArray, params: RobotParams):
    """Convenience: (M_r, C_r, G_r) straight from reduced state."""
    phi_dot = params.wheel_radius / params.axle_half_width * (zeta_dot[0] - zeta_dot[1])
    q_dot = np.zeros(6)
    q_dot[:3] = h_matrix(q[2], params) @ zeta_dot[:2]
    q_dot[3:] = zeta_dot[2:]
    m, c, g = joint_dynamics(q, q_dot, params)
    m_r, c_r, g_r, _ = reduce_dynamics(
        m, c, g, input_map(q[2], params),
        h_matrix(q[2], params), h_matrix_dot(q[2], phi_dot, params))
    return m_r, c_r, g_r


# --- object ---------------------------------------------------------------

@dataclass(frozen=True)
class ObjectModel:
    """Planar rigid object rigidly grasped at N fixed contact points.

    ``com_offset`` is the operational point -> COM vector in the task frame;
    grasp offsets are operational point -> contact i, also task frame.
    """

    mass: float
    inertia_z: float
    com_offset: tuple[float, float]
    grasp_offsets: tuple[GraspOffset, ...]

    def __post_init__(self):
        if self.mass <= 0 or self.inertia_z <= 0:
            raise ValueError("object mass and inertia must be positive")

    @property
    def n_contacts(self) -> int:
        return len(self.grasp_offsets)

    def r_body(self, i: int) -> NDArray:
        """COM -> contact i, body frame (constant)."""
        return np.asarray(self.grasp_offsets[i].r_ti) - np.asarray(self.com_offset)


def object_dynamics(obj: ObjectModel):
    """(M_o, C_o, g_o): planar rigid body about its COM, horizontal plane."""
    m_o = np.diag([obj.mass, obj.mass, obj.inertia_z])
    return m_o, np.zeros((3, 3)), np.zeros(3)


def true_theta_obj(obj: ObjectModel, i: int) -> NDArray:
    """Per-robot lumped object parameters (m, m r_bx, m r_by, I + m|r_b|^2)."""
    rb = obj.r_body(i)
    return np.array([obj.mass, obj.mass * rb[0], obj.mass * rb[1],
                     obj.inertia_z + obj.mass * (rb @ rb)])


def d_matrix(r_world: NDArray) -> NDArray:
    """Inverse object Jacobian J_o^{-1} for COM->contact vector r (world)."""
    return np.array([[1.0, 0.0, r_world[1]],
                     [0.0, 1.0, -r_world[0]],
                     [0.0, 0.0, 1.0]])


def d_matrix_dot(r_world: NDArray, omega: float) -> NDArray:
    r_dot = omega * np.array([-r_world[1], r_world[0]])
    out = np.zeros((3, 3))
    out[0, 2], out[1, 2] = r_dot[1], -r_dot[0]
    return out


def synthesized_dynamics(m_r, c_r, g_r, j_phi, j_phi_dot, beta, m_o, c_o, g_o):
    """Robot dynamics plus its beta-weighted share of the object dynamics."""
    m_s = m_r + j_phi.T @ beta @ m_o @ j_phi
    c_s = c_r + j_phi.T @ beta @ (c_o @ j_phi + m_o @ j_phi_dot)
    g_s = g_r + j_phi.T @ beta @ g_o
    return m_s, c_s, g_s


# --- dynamic regressor -----------------------------------------------------

def _mono_index():
    monos = [(i, j) for d in range(4) for i in range(d + 1) for j in range(d + 1)
             if i + j == d]
    return {m: k for k, m in enumerate(monos)}, monos


_MONO_IDX, _MONOS = _mono_index()          # 10 monomials r2^i rb^j, i+j<=3
_T_EXP = [(0, 0), (1, 0), (0, 1)]          # exponents of the T-basis factors
N_ROBOT_COLS = N_THETA_R * len(_MONOS)     # 150
_PAIRS = [(k, m) for k in range(10) for m in range(k, 10)]  # 55 sym pairs
N_OBJ_COLS = 2 * 4 * len(_PAIRS)           # 440
N_THETA_D = N_ROBOT_COLS + N_OBJ_COLS      # 590


def _scatter_tables():
    """Column index tables of the robot-part monomial scatter."""
    nm = len(_MONOS)
    base = np.arange(N_THETA_R) * nm
    idx_m = np.zeros((3, 3, N_THETA_R), dtype=int)
    idx_d = np.zeros((3, 3, N_THETA_R), dtype=int)
    idx_c = np.zeros((3, 3, 3, N_THETA_R), dtype=int)
    for p1 in range(3):
        for p2 in range(3):
            e12 = (_T_EXP[p1][0] + _T_EXP[p2][0], _T_EXP[p1][1] + _T_EXP[p2][1])
            idx_m[p1, p2] = base + _MONO_IDX[e12]
            idx_d[p1, p2] = base + _MONO_IDX[(e12[0], e12[1] + 1)]
            for pv in range(3):
                e3 = (e12[0] + _T_EXP[pv][0], e12[1] + _T_EXP[pv][1])
                idx_c[p1, pv, p2] = base + _MONO_IDX[e3]
    return idx_m, idx_d, idx_c


_IDX_M, _IDX_D, _IDX_C = _scatter_tables()
_PAIR_K = np.array([k for k, _ in _PAIRS])
_PAIR_M = np.array([m for _, m in _PAIRS])


def _scatter_matrix():
    """One-hot (45, n_monos) map from contribution slot to monomial column.

    Row order matches the concatenation (col_m 9, col_d 9, col_c 27) in
    dynamic_regressor; the k-th theta_r block just shifts columns by k * nm,
    so a single tensordot assembles the whole robot part.
    """
    offs = ([_IDX_M[p1, p2, 0] for p1 in range(3) for p2 in range(3)]
            + [_IDX_D[p1, p2, 0] for p1 in range(3) for p2 in range(3)]
            + [_IDX_C[p1, pv, p2, 0] for p1 in range(3)
               for pv in range(3) for p2 in range(3)])
    s = np.zeros((len(offs), len(_MONOS)))
    s[np.arange(len(offs)), offs] = 1.0
    return s


_SCATTER = _scatter_matrix()


def _t_basis(phi_v: float):
    """T = sum_p t_p T_p with t = (1, r/2, r/b); plus dT_p/dphi."""
    c, s = np.cos(phi_v), np.sin(phi_v)
    t0 = np.zeros((6, 5)); t0[3:, 2:] = np.eye(3)
    t1 = np.zeros((6, 5)); t1[0, 0] = t1[0, 1] = c; t1[1, 0] = t1[1, 1] = s
    t2 = np.zeros((6, 5)); t2[2, 0], t2[2, 1] = 1.0, -1.0
    d1 = np.zeros((6, 5)); d1[0, 0] = d1[0, 1] = -s; d1[1, 0] = d1[1, 1] = c
    return np.stack([t0, t1, t2]), np.stack([np.zeros((6, 5)), d1, np.zeros((6, 5))])


def _w_basis(beta_scalar: float, phi_o: float):
    """Object-coupling weight matrices per lumped object parameter.

    W_j gives D^T beta M_o D and W2h_j the omega-coefficient of
    D^T beta M_o Ddot, both linear in (m, m r_bx, m r_by, I+m|r_b|^2).
    """
    c, s = np.cos(phi_o), np.sin(phi_o)
    w = np.zeros((4, 3, 3))
    w2 = np.zeros((4, 3, 3))
    w[0, 0, 0] = w[0, 1, 1] = 1.0
    w[1, 0, 2] = w[1, 2, 0] = s
    w[1, 1, 2] = w[1, 2, 1] = -c
    w[2, 0, 2] = w[2, 2, 0] = c
    w[2, 1, 2] = w[2, 2, 1] = s
    w[3, 2, 2] = 1.0
    w2[1, 0, 2] = c
    w2[1, 1, 2] = s
    w2[2, 0, 2] = -s
    w2[2, 1, 2] = c
    return beta_scalar * w, beta_scalar * w2


def true_theta_d(params: RobotParams, theta_obj: NDArray) -> NDArray:
    """Ground-truth lumped theta_d for one robot and its object share."""
    from coopnmm.kinematics import true_theta_k
    r2 = params.wheel_radius / 2.0
    rb = params.wheel_radius / params.axle_half_width
    theta = np.zeros(N_THETA_D)
    th_r = true_theta_r(params)
    for k in range(N_THETA_R):
        for (i, j), idx in _MONO_IDX.items():
            theta[k * len(_MONOS) + idx] = th_r[k] * r2**i * rb**j
    th_bar = np.concatenate(([1.0], true_theta_k(params)))
    base = N_ROBOT_COLS
    for e in range(2):
        for j in range(4):
            for p, (k, m) in enumerate(_PAIRS):
                theta[base + (e * 4 + j) * len(_PAIRS) + p] = (
                    th_bar[k] * th_bar[m] * theta_obj[j] * rb**e)
    return theta


def dynamic_regressor(q: NDArray, zeta_dot: NDArray, zeta_r_dot: NDArray,
                      zeta_r_ddot: NDArray, beta_scalar: float,
                      phi_obj: float) -> NDArray:
    """5 x 590 regressor Y_d with Y_d theta_d = M_s zr_ddot + C_s zr_dot + G_s.

    Built entirely from measurable signals (configuration, reduced rates,
    reference rates, the load share and the object orientation); every
    uncertain physical quantity lives in theta_d.
    """
    a = absolute_angles(q)
    w = zeta_dot[0] - zeta_dot[1]          # wheel differential
    omega_known = zeta_dot[2:].sum()       # arm part of the EE angular rate
    y = np.empty((5, N_THETA_D))

    # robot part: T^T [M (T zdd + Tdot zd_r) + C(.) T zd_r]
    mb = mass_basis(a)
    db = dmass_basis(a)
    tt, tt_d = _t_basis(q[2])
    tz2 = tt @ zeta_r_ddot
    tdz = w * (tt_d @ zeta_r_dot)
    tzr = tt @ zeta_r_dot
    u_v = tt @ zeta_dot                    # candidate plant rates
    # Christoffel per (k, v): C_k evaluated at q_dot = T_v zeta_dot
    t1 = np.moveaxis(db.transpose(0, 2, 3, 1) @ u_v[:, 2:].T, -1, 1)
    t2 = np.zeros((N_THETA_R, 3, 6, 6))
    t2[..., :, 2:] = (db @ u_v.T).transpose(0, 3, 2, 1)
    c_kv = 0.5 * (t1 + t2 - np.swapaxes(t2, -1, -2))

    ttt = tt.transpose(0, 2, 1)
    mq2 = mb @ tz2.T                                                  # M_k T_q v
    mqd = mb @ tdz.T
    col_m = (ttt[:, None] @ mq2[None]).transpose(0, 3, 2, 1)          # (p,q,i,k)
    col_d = (ttt[:, None] @ mqd[None]).transpose(0, 3, 2, 1)
    z = (c_kv @ tzr.T).transpose(0, 1, 3, 2)
    col_c = (z[None] @ tt[:, None, None]).transpose(0, 2, 3, 4, 1)
    vals = np.concatenate([col_m.reshape(9, 5 * N_THETA_R),
                           col_d.reshape(9, 5 * N_THETA_R),
                           col_c.reshape(27, 5 * N_THETA_R)])
    y[:, :N_ROBOT_COLS] = (vals.T @ _SCATTER).reshape(5, N_ROBOT_COLS)

    # object part: J_e^T D^T beta M_o (D v + Ddot u) in fully lumped form
    e_bar = np.concatenate([jacobian_passthrough()[None], jacobian_basis(a)])
    a_dot_known = np.concatenate(([0.0], np.cumsum(zeta_dot[2:])))
    eda = np.concatenate([np.zeros((1, 3, 5)),
                          jacobian_basis_dot(a, a_dot_known)])
    edb = np.concatenate([np.zeros((1, 3, 5)),
                          jacobian_basis_dot(a, w * np.ones(4))])
    v0 = e_bar @ zeta_r_ddot + eda @ zeta_r_dot
    v1 = edb @ zeta_r_dot
    u = e_bar @ zeta_r_dot
    wj, w2h = _w_basis(beta_scalar, phi_obj)
    w2u = (w2h @ u.T).transpose(0, 2, 1)
    g0 = (wj @ v0.T).transpose(0, 2, 1) + omega_known * w2u
    g1 = (wj @ v1.T).transpose(0, 2, 1) + w * w2u
    col_full = np.tensordot(e_bar, np.stack([g0, g1]),
                            axes=(1, 3)).transpose(1, 2, 3, 0, 4)  # (5,2,4,10,10)
    sym = col_full[:, :, :, _PAIR_K, _PAIR_M]
    off = _PAIR_K != _PAIR_M
    sym[..., off] += col_full[:, :, :, _PAIR_M[off], _PAIR_K[off]]
    y[:, N_ROBOT_COLS:] = sym.reshape(5, N_OBJ_COLS)
    return y


N_THETA_ID = 30


def true_theta_id(params: RobotParams, r_body: NDArray) -> NDArray:
    """Ground-truth lumped parameters of the internal-wrench feedforward."""
    from coopnmm.kinematics import true_theta_k
    th_bar = np.concatenate(([1.0], true_theta_k(params)))
    return np.outer(th_bar, np.array([1.0, r_body[0], r_body[1]])).ravel()


def internal_wrench_regressor(q: NDArray, f_id: NDArray, phi_obj: float) -> NDArray:
    """5 x 30 regressor with Y_Id theta_Id = J_phi^T F_Id.

    The contact-to-COM lever arm and the end-effector Jacobian are both
    uncertain, so the map is lumped over (1, theta_k) x (1, r_bx, r_by).
    """
    c, s = np.cos(phi_obj), np.sin(phi_obj)
    v = np.zeros((3, 3))
    v[0, :2] = f_id[:2]
    v[0, 2] = f_id[2]
    v[1, 2] = s * f_id[0] - c * f_id[1]
    v[2, 2] = c * f_id[0] + s * f_id[1]
    a = absolute_angles(q)
    e_bar = np.concatenate([jacobian_passthrough()[None], jacobian_basis(a)])
    # columns ordered to match true_theta_id: (k_bar, j) row-major
    return np.einsum("kba,jb->akj", e_bar, v).reshape(5, N_THETA_ID)
