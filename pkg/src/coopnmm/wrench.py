"""Grasp matrix, wrench decomposition and wrench synthesis.

A planar wrench is a length-3 array (f_x, f_y, tau_z).  Contact wrenches
``F_e,i`` act at the grasp points; mapped through the object Jacobians they
superpose to the net wrench at the object's COM:

    F_o = sum_i J_o,i^T F_e,i = G_o [F_e,1; ...; F_e,N]

The COM-level contribution of each robot splits into a motion-inducing part
(external) and an internal part that cancels over the team.  The default
split follows the non-squeezing convention: internal forces carry no
component along the net force, so the physical-plausibility inequalities
hold with equality by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


class DegenerateGrasp(Exception):
    """All contact points coincide; decomposition is ill-posed."""


def cross2(a: NDArray, b: NDArray) -> float:
    """Planar cross product z-component."""
    return a[0] * b[1] - a[1] * b[0]


@dataclass(frozen=True)
class GraspMap:
    """Object Jacobians (one per contact) and the stacked grasp matrix."""

    r_contacts: NDArray          # (N, 2) COM -> contact, world frame
    object_jacobians: NDArray    # (N, 3, 3)
    grasp_matrix: NDArray        # (3, 3N)

    @property
    def n_contacts(self) -> int:
        return self.object_jacobians.shape[0]


def object_jacobian(r: NDArray) -> NDArray:
    """J_o for COM->contact vector r: contact twist = J_o @ COM twist."""
    return np.array([[1.0, 0.0, -r[1]],
                     [0.0, 1.0, r[0]],
                     [0.0, 0.0, 1.0]])


def build_grasp_map(r_contacts) -> GraspMap:
    r = np.atleast_2d(np.asarray(r_contacts, dtype=float))
    jac = np.stack([object_jacobian(ri) for ri in r])
    g_o = np.hstack([j.T for j in jac])
    return GraspMap(r_contacts=r, object_jacobians=jac, grasp_matrix=g_o)


def net_wrench(grasp: GraspMap, f_e: NDArray) -> NDArray:
    """F_o = G_o stack(F_e)."""
    return grasp.grasp_matrix @ np.asarray(f_e, dtype=float).reshape(-1)


def decompose(f_e: NDArray, grasp: GraspMap, mode: str = "projection",
              eps: float = 1e-9):
    """Split COM-level contributions into external and internal parts.

    Returns (f_E, f_I), both (N, 3) at COM level, with
    sum f_E = F_o = G_o F_e and sum f_I = 0.

    ``projection`` (default, non-squeezing): each robot's external force is
    its projection onto the net force direction, so internal forces are
    orthogonal to the net force; torques are split the same way.  When the
    net force (or torque) is below ``eps`` the whole channel is internal.
    ``pseudoinverse``: equal sharing F_o / N (the Moore-Penrose solution for
    identical COM-level maps).
    """
    f_e = np.asarray(f_e, dtype=float).reshape(-1, 3)
    n = f_e.shape[0]
    if n < 2:
        raise ValueError("decomposition needs at least two contacts")
    if np.max(np.linalg.norm(grasp.r_contacts - grasp.r_contacts[0], axis=1)) < eps:
        raise DegenerateGrasp("all contact points coincide")
    com = np.einsum("nij,nj->ni", np.swapaxes(grasp.object_jacobians, 1, 2), f_e)
    f_o = com.sum(axis=0)
    f_ext = np.zeros((n, 3))
    if mode == "projection":
        fn = f_o[:2]
        nf2 = fn @ fn
        if nf2 > eps**2:
            c = com[:, :2] @ fn / nf2
            f_ext[:, :2] = np.outer(c, fn)
        if abs(f_o[2]) > eps:
            f_ext[:, 2] = com[:, 2]
            # torque channel: shares d_i = tau_i / tau_o already sum to tau_o
        else:
            f_ext[:, 2] = 0.0
    elif mode == "pseudoinverse":
        f_ext[:] = f_o / n
    else:
        raise ValueError(f"unknown decomposition mode {mode!r}")
    return f_ext, com - f_ext


def desired_motion_wrench(f_od: NDArray, beta: NDArray, r_i: NDArray) -> NDArray:
    """Desired motion wrench at the contact point for load share beta.

    Planar form of the block map [[beta I, 0], [-beta S(r), beta I]]: the
    torque row subtracts the lever-arm torque so that, mapped back through
    J_o^T, the COM contribution is exactly beta * F_od.
    """
    f = np.diag(beta)[:2] * np.asarray(f_od[:2], dtype=float)
    tau = beta[2, 2] * f_od[2] - cross2(np.asarray(r_i, dtype=float), f)
    return np.array([f[0], f[1], tau])


def plausibility_check(f_id: NDArray, beta: NDArray, f_od: NDArray,
                       r_i: NDArray) -> bool:
    """Sign constraints tying a desired internal wrench to the load share.

    The desired internal force may not oppose the shared motion force, and
    the contact-torque components must agree in sign as well.
    """
    bf = np.diag(beta)[:2] * np.asarray(f_od[:2], dtype=float)
    r_i = np.asarray(r_i, dtype=float)
    c1 = bf @ np.asarray(f_id[:2], dtype=float) >= 0.0
    c2 = (cross2(r_i, bf) - beta[2, 2] * f_od[2]) * \
         (cross2(r_i, f_id[:2]) - f_id[2]) >= 0.0
    return bool(c1 and c2)


def projected_load_share(f_e: NDArray, grasp: GraspMap, object_wrench: NDArray,
                         threshold: float = 1e-2) -> NDArray:
    """Scalar realized share per robot: projection onto the net wrench.

    beta_r,i = <f_E,i, F_o> / ||F_o||^2, which sums to 1 and is the
    least-squares scalar fit f_E,i ~ beta F_o.  The per-channel ratio
    (``measured_load_share``) blows up whenever one wrench component crosses
    zero, so it is unusable along rotating trajectories; the projection is
    well-conditioned whenever the net wrench itself is significant.  Returns
    NaN (caller holds the last value) when ||object_wrench|| is below
    ``threshold``.
    """
    f_ext, _ = decompose(f_e, grasp)
    u = np.asarray(object_wrench, dtype=float)
    den = float(u @ u)
    if den < threshold**2:
        return np.full(f_ext.shape[0], np.nan)
    return f_ext @ u / den


def measured_load_share(f_e: NDArray, grasp: GraspMap, object_wrench: NDArray,
                        mode: str = "projection", threshold: float = 1e-3):
    """Realized load-share diagonals from measured contact wrenches.

    ``object_wrench`` is M_o xddot + C_o xdot + g_o at the COM.  Returns
    (beta_r, ill_conditioned) where beta_r is (N, 3) with NaN marking
    channels whose object-wrench component is below the threshold
    (undefined, to be held by the caller).
    """
    f_ext, _ = decompose(f_e, grasp, mode=mode)
    u = np.asarray(object_wrench, dtype=float)
    beta_r = np.full((f_ext.shape[0], 3), np.nan)
    valid = np.abs(u) > threshold
    beta_r[:, valid] = f_ext[:, valid] / u[valid]
    return beta_r, not valid.all()
