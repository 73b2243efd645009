"""Distributed allocation of the cooperative task to each end-effector.

Each agent runs an estimator x_hat_d,i of its *own* desired end-effector
pose x_d,i = x_td + T_ti, where T_ti rotates the agent's fixed task-frame
grasp offset by the desired task orientation.  Only agents with b_i = 1
know the true trajectory coefficients; the others adapt a coefficient
estimate theta_hat_tr from neighbor information alone.

The desired trajectory is a linear combination of a basis known to all
agents.  The estimator subsystem is autonomous (its right-hand side depends
only on t and its own states), and with the raw power basis {1, t, t^2, t^3}
it is *stiff*: the effective feedback gain Gamma_tr ||f(t)||^2 reaches ~3e5
by t = 10 s, far beyond what a 1 ms fixed-step integrator tolerates.  The
engine therefore presolves it once per scenario with an adaptive stiff
solver and samples the dense solution inside the control loop
(``presolve_allocation``); a plain fixed-step path (``simulate_allocation``)
is kept for estimator-only studies at moderate gains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from coopnmm.kinematics import rot2
from coopnmm.topology import LaplacianBundle, Topology, neighbors


class MissingNeighborData(Exception):
    """A required neighbor signal is absent from this tick's snapshot."""


@dataclass(frozen=True)
class TrajectoryBasis:
    """Polynomial (in t/T) plus optional sinusoid basis, shared by all agents."""

    time_scale: float = 1.0
    poly_order: int = 4                    # 1, t/T, ..., (t/T)^(order-1)
    frequencies: tuple[float, ...] = ()    # angular frequencies, sin/cos pairs

    @property
    def l(self) -> int:
        return self.poly_order + 2 * len(self.frequencies)

    def eval(self, t: float):
        """(f, f_dot, f_ddot), each length l."""
        ts = self.time_scale
        tau = t / ts
        n = self.poly_order
        f = np.zeros(self.l)
        fd = np.zeros(self.l)
        fdd = np.zeros(self.l)
        for k in range(n):
            f[k] = tau**k
            if k >= 1:
                fd[k] = k * tau**(k - 1) / ts
            if k >= 2:
                fdd[k] = k * (k - 1) * tau**(k - 2) / ts**2
        for p, om in enumerate(self.frequencies):
            s, c = np.sin(om * t), np.cos(om * t)
            i = n + 2 * p
            f[i], f[i + 1] = s, c
            fd[i], fd[i + 1] = om * c, -om * s
            fdd[i], fdd[i + 1] = -om**2 * s, -om**2 * c
        return f, fd, fdd

    def coefficients(self, poly: NDArray, sin_cos: NDArray | None = None) -> NDArray:
        """Basis coefficients of sum_k poly[k] t^k (+ sinusoid pairs).

        ``poly`` holds raw powers of t; they are rescaled to the t/T basis.
        ``sin_cos`` is (n_freq, 2) of (sin, cos) amplitudes.
        """
        theta = np.zeros(self.l)
        for k, a in enumerate(np.asarray(poly, dtype=float)):
            theta[k] = a * self.time_scale**k
        if sin_cos is not None:
            theta[self.poly_order:] = np.asarray(sin_cos, dtype=float).ravel()
        return theta


def eval_desired(t: float, theta: NDArray, basis: TrajectoryBasis):
    """(x_td, x_td_dot, x_td_ddot) for per-coordinate coefficients theta (3, l)."""
    f, fd, fdd = basis.eval(t)
    theta = np.asarray(theta, dtype=float).reshape(3, basis.l)
    return theta @ f, theta @ fd, theta @ fdd


@dataclass(frozen=True)
class AgentTaskGeometry:
    """Fixed grasp offset of one agent: task frame -> its end-effector."""

    r_ti: tuple[float, float]
    phi_ti: float = 0.0


def task_offset(o_td: float, geom: AgentTaskGeometry) -> NDArray:
    """T_ti: world-frame EE offset for task orientation o_td."""
    p = rot2(o_td) @ np.asarray(geom.r_ti, dtype=float)
    return np.array([p[0], p[1], geom.phi_ti])


def task_offset_rate(o_td: float, omega_td: float, geom: AgentTaskGeometry) -> NDArray:
    p = rot2(o_td) @ np.asarray(geom.r_ti, dtype=float)
    return np.array([-omega_td * p[1], omega_td * p[0], 0.0])


def desired_agent_pose(t: float, theta: NDArray, basis: TrajectoryBasis,
                       geom: AgentTaskGeometry):
    """True (x_d,i, x_d,i_dot) = task trajectory composed with the offset."""
    x_td, xd_td, _ = eval_desired(t, theta, basis)
    off = task_offset(x_td[2], geom)
    off_dot = task_offset_rate(x_td[2], xd_td[2], geom)
    return x_td + off, xd_td + off_dot


def consensus_error(topology: Topology, i: int, x_hat_i: NDArray,
                    neighbor_poses: dict[int, NDArray],
                    geometries: list[AgentTaskGeometry],
                    o_td: float | None = None,
                    delta_i: NDArray | None = None) -> NDArray:
    """Local neighborhood consensus error gamma_i.

    For b_i = 1 the relative offsets T_ji use the known task orientation and
    the tracking error delta_i is added; for b_i = 0 the offsets are rebuilt
    from the agent's own orientation estimate (third entry of x_hat_i), which
    is exact at consensus.
    """
    b_i = topology.access_flags[i]
    gamma = np.zeros(3)
    for j in neighbors(topology, i):
        if j not in neighbor_poses:
            raise MissingNeighborData(f"agent {i} missing x_hat_d of neighbor {j}")
        dr = (np.asarray(geometries[i].r_ti, dtype=float)
              - np.asarray(geometries[j].r_ti, dtype=float))
        dphi = geometries[i].phi_ti - geometries[j].phi_ti
        if b_i == 1.0:
            if o_td is None:
                raise ValueError("informed agent needs the true task orientation")
            rot = rot2(o_td)
        else:
            rot = rot2(x_hat_i[2] - geometries[i].phi_ti)
        t_ji = np.concatenate([rot @ dr, [dphi]])
        gamma += x_hat_i - neighbor_poses[j] - t_ji
    if b_i == 1.0:
        if delta_i is None:
            raise ValueError("informed agent needs its allocation error delta_i")
        gamma += delta_i
    return gamma


def allocation_rates(t: float, i: int, x_hat_i: NDArray, theta_hat_i: NDArray,
                     gamma_i: NDArray, bundle: LaplacianBundle,
                     basis: TrajectoryBasis, geom: AgentTaskGeometry,
                     kappa: float, gamma_tr: float,
                     theta_true: NDArray | None = None):
    """(x_hat_dot, theta_hat_dot) of the estimation law.

    theta_hat_i is (3, l); for an informed agent pass theta_true and the
    returned theta_hat_dot is zero (the estimate is never used).
    """
    f, fd, _ = basis.eval(t)
    w_i = bundle.w[i]
    if theta_true is not None:
        theta = np.asarray(theta_true, dtype=float).reshape(3, basis.l)
        o_td, om_td = theta[2] @ f, theta[2] @ fd
        x_hat_dot = (-kappa / w_i * gamma_i + theta @ fd
                     + task_offset_rate(o_td, om_td, geom))
        return x_hat_dot, np.zeros_like(theta_hat_i)
    theta_hat = np.asarray(theta_hat_i, dtype=float).reshape(3, basis.l)
    theta_hat_dot = -gamma_tr * np.outer(gamma_i, f)
    o_hat, om_hat = theta_hat[2] @ f, theta_hat[2] @ fd
    x_hat_dot = (-kappa / w_i * gamma_i
                 + theta_hat_dot @ f + theta_hat @ fd
                 + task_offset_rate(o_hat, om_hat, geom))
    return x_hat_dot, theta_hat_dot


def simulate_allocation(topology: Topology, bundle: LaplacianBundle,
                        basis: TrajectoryBasis, theta_true: NDArray,
                        geometries: list[AgentTaskGeometry],
                        x_hat0: NDArray, theta_hat0: NDArray,
                        kappa: float, gamma_tr: float,
                        t_final: float, dt: float):
    """Integrate the team estimator alone (no robots) with fixed-step RK4.

    Returns (times, delta_history) with delta_history[k, i] = ||delta_i(t_k)||.
    Used for estimator-only studies and convergence tests; the engine embeds
    the same rate functions in the full closed loop.
    """
    n = topology.n_agents
    l = basis.l
    theta_true = np.asarray(theta_true, dtype=float).reshape(3, l)
    x_hat = np.array(x_hat0, dtype=float).reshape(n, 3)
    th_hat = np.array(theta_hat0, dtype=float).reshape(n, 3, l)

    def rates(t, x_hat, th_hat):
        x_td, _, _ = eval_desired(t, theta_true, basis)
        xd = np.zeros((n, 3))
        thd = np.zeros((n, 3, l))
        poses = {j: x_hat[j] for j in range(n)}
        for i in range(n):
            informed = topology.access_flags[i] == 1.0
            delta = x_hat[i] - (x_td + task_offset(x_td[2], geometries[i])) \
                if informed else None
            gam = consensus_error(topology, i, x_hat[i], poses, geometries,
                                  o_td=x_td[2] if informed else None,
                                  delta_i=delta)
            xd[i], thd[i] = allocation_rates(
                t, i, x_hat[i], th_hat[i], gam, bundle, basis, geometries[i],
                kappa, gamma_tr, theta_true=theta_true if informed else None)
        return xd, thd

    steps = int(round(t_final / dt))
    times = np.zeros(steps + 1)
    delta_hist = np.zeros((steps + 1, n))

    def record(k, t):
        times[k] = t
        x_td, _, _ = eval_desired(t, theta_true, basis)
        for i in range(n):
            d = x_hat[i] - (x_td + task_offset(x_td[2], geometries[i]))
            delta_hist[k, i] = np.linalg.norm(d)

    record(0, 0.0)
    for k in range(steps):
        t = k * dt
        k1 = rates(t, x_hat, th_hat)
        k2 = rates(t + dt / 2, x_hat + dt / 2 * k1[0], th_hat + dt / 2 * k1[1])
        k3 = rates(t + dt / 2, x_hat + dt / 2 * k2[0], th_hat + dt / 2 * k2[1])
        k4 = rates(t + dt, x_hat + dt * k3[0], th_hat + dt * k3[1])
        x_hat = x_hat + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        th_hat = th_hat + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        record(k + 1, (k + 1) * dt)
    return times, delta_hist


class AllocationSolution:
    """Dense solution of the team estimator; sampled by the engine."""

    def __init__(self, sol, rhs, n_agents: int, l: int,
                 basis: TrajectoryBasis, theta_true: NDArray,
                 geometries: list[AgentTaskGeometry]):
        self._sol = sol
        self._rhs = rhs
        self.n_agents = n_agents
        self.l = l
        self.basis = basis
        self.theta_true = theta_true
        self.geometries = geometries

    def sample(self, t: float):
        """(x_hat (n,3), x_hat_dot (n,3)) at time t."""
        t = min(max(t, self._sol.t[0]), self._sol.t[-1])
        y = self._sol.sol(t)
        n = self.n_agents
        dy = self._rhs(t, y)
        return y[:3 * n].reshape(n, 3), dy[:3 * n].reshape(n, 3)

    def theta_hat(self, t: float) -> NDArray:
        y = self._sol.sol(min(max(t, self._sol.t[0]), self._sol.t[-1]))
        n = self.n_agents
        return y[3 * n:].reshape(n, 3, self.l)

    def delta(self, t: float) -> NDArray:
        """(n, 3) allocation errors x_hat_d,i - x_d,i (diagnostic)."""
        x_hat, _ = self.sample(t)
        x_td, _, _ = eval_desired(t, self.theta_true, self.basis)
        return np.stack([x_hat[i] - (x_td + task_offset(x_td[2], g))
                         for i, g in enumerate(self.geometries)])


def team_allocation_rhs(topology: Topology, bundle: LaplacianBundle,
                        basis: TrajectoryBasis, theta_true: NDArray,
                        geometries: list[AgentTaskGeometry],
                        kappa: float, gamma_tr: float):
    """Whole-team estimator right-hand side as one vectorized closure.

    Same law as consensus_error + allocation_rates applied per agent, but
    evaluated for all agents in a handful of array operations; the dense
    solution is sampled three times per control tick, so this is on the
    simulation hot path.
    """
    n = topology.n_agents
    l = basis.l
    theta_true = np.asarray(theta_true, dtype=float).reshape(3, l)
    adj = (topology.adjacency != 0.0).astype(float)
    informed = topology.access_flags == 1.0
    r = np.array([g.r_ti for g in geometries], dtype=float)
    phi = np.array([g.phi_ti for g in geometries])
    dr_sum = np.einsum("ij,ijk->ik", adj,
                       r[:, None, :] - r[None, :, :])
    deg = adj.sum(axis=1)
    kw = kappa / bundle.w

    def rhs(t, y):
        x_hat = y[:3 * n].reshape(n, 3)
        th_hat = y[3 * n:].reshape(n, 3, l)
        f, fd, _ = basis.eval(t)
        x_td = theta_true @ f
        o_td = x_td[2]
        ang = np.where(informed, o_td, x_hat[:, 2] - phi)
        ca, sa = np.cos(ang), np.sin(ang)
        gamma = deg[:, None] * x_hat - adj @ x_hat
        gamma[:, 0] -= ca * dr_sum[:, 0] - sa * dr_sum[:, 1]
        gamma[:, 1] -= sa * dr_sum[:, 0] + ca * dr_sum[:, 1]
        gamma[:, 2] -= deg * phi - adj @ phi
        c0, s0 = np.cos(o_td), np.sin(o_td)
        delta = x_hat - x_td
        delta[:, 0] -= c0 * r[:, 0] - s0 * r[:, 1]
        delta[:, 1] -= s0 * r[:, 0] + c0 * r[:, 1]
        delta[:, 2] -= phi
        gamma[informed] += delta[informed]

        thd = np.where(informed[:, None, None], 0.0,
                       -gamma_tr * gamma[:, :, None] * f[None, None, :])
        th_eff = np.where(informed[:, None, None], theta_true[None], th_hat)
        o_hat = th_eff[:, 2] @ f
        om_hat = th_eff[:, 2] @ fd
        ch, sh = np.cos(o_hat), np.sin(o_hat)
        xd = (-kw[:, None] * gamma + th_eff @ fd + thd @ f)
        xd[:, 0] -= om_hat * (sh * r[:, 0] + ch * r[:, 1])
        xd[:, 1] += om_hat * (ch * r[:, 0] - sh * r[:, 1])
        return np.concatenate([xd.ravel(), thd.ravel()])
    return rhs


def presolve_allocation(topology: Topology, bundle: LaplacianBundle,
                        basis: TrajectoryBasis, theta_true: NDArray,
                        geometries: list[AgentTaskGeometry],
                        x_hat0: NDArray, theta_hat0: NDArray,
                        kappa: float, gamma_tr: float, t_final: float,
                        rtol: float = 1e-8, atol: float = 1e-10) -> AllocationSolution:
    """Integrate the full team estimator over [0, t_final] with LSODA.

    Informed agents (b_i = 1) use the true coefficients and never carry an
    estimate; uninformed agents see only neighbor pose estimates, keeping
    the information structure of the distributed law intact.
    """
    from scipy.integrate import solve_ivp

    n = topology.n_agents
    theta_true = np.asarray(theta_true, dtype=float).reshape(3, basis.l)
    y0 = np.concatenate([np.asarray(x_hat0, dtype=float).ravel(),
                         np.asarray(theta_hat0, dtype=float).ravel()])
    rhs = team_allocation_rhs(topology, bundle, basis, theta_true,
                              geometries, kappa, gamma_tr)
    sol = solve_ivp(rhs, (0.0, t_final), y0, method="LSODA",
                    dense_output=True, rtol=rtol, atol=atol, max_step=0.1)
    if sol.status != 0:
        raise RuntimeError(f"allocation presolve failed: {sol.message}")
    return AllocationSolution(sol, rhs, n, basis.l, basis, theta_true, geometries)
