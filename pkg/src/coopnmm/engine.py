"""Closed-loop simulation of the networked transport team.

Ground-truth physics and orchestration: each robot integrates its reduced
(actuation-space) dynamics, the object is a planar rigid body, and the rigid
grasp couples them through constraint forces computed in closed form every
stage (operational-space multiplier solve with Baumgarte stabilization).
The measured contact wrench fed back to the controllers is exactly this
multiplier (noiseless force/torque sensing).

Timing model: the plant integrates with classical fixed-step RK4; the
per-agent controllers run once per tick and their outputs (torques and
adaptive-state rates) are held over the tick, i.e. a 1 kHz discrete
controller around a continuous plant.  Neighbor data crosses the message
bus with a one-tick delay (previous-tick snapshot, zero-order hold), which
is the one discretization a continuous-time analysis cannot specify.
Everything is sequential and seeded by nothing: two runs with the same
configuration are bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from coopnmm.allocation import AllocationSolution
from coopnmm.control import AgentMemory, ControllerGains, controller_step, observer_rate
from coopnmm.dynamics import (
    ObjectModel,
    batched_reduced_dynamics,
    d_matrix,
    input_map,
    joint_dynamics,
    reduced_dynamics,
    true_theta_d,
    true_theta_id,
    true_theta_obj,
)
from coopnmm.kinematics import (
    RobotParams,
    absolute_angles,
    forward_kinematics,
    h_matrix,
    jacobian_basis_batch,
    jacobian_basis_dot_batch,
    jacobian_passthrough,
    kinematic_passthrough,
    kinematic_regressor,
    nonholonomic_row,
    reduced_jacobian,
    reduced_jacobian_dot,
    rot2,
    t_matrix,
    t_matrix_dot,
    true_theta_k,
)
from coopnmm.topology import Topology, neighbors
from coopnmm.wrench import build_grasp_map, object_jacobian, projected_load_share


def _full_jacobian(q: NDArray, params: RobotParams) -> NDArray:
    """3x6 end-effector Jacobian in full coordinates (x_v, y_v, phi_v, q_m)."""
    a = absolute_angles(q)
    lengths = np.array([params.base_to_arm_offset, *params.link_lengths])
    j = np.zeros((3, 6))
    j[0, 0] = j[1, 1] = 1.0
    lx, ly = -lengths * np.sin(a), lengths * np.cos(a)
    for col in range(4):
        j[0, 2 + col] = lx[col:].sum()
        j[1, 2 + col] = ly[col:].sum()
        j[2, 2 + col] = 1.0
    return j


def observer_adaptation_step(x_o: NDArray, theta_hat_k: NDArray, q: NDArray,
                             zeta_dot: NDArray, x_e: NDArray, x_e_dot: NDArray,
                             gains: ControllerGains, dt: float,
                             adapt: bool) -> tuple[NDArray, NDArray]:
    """Advance the coupled observer / kinematic-estimate states by one tick.

    With (q, zeta_dot) frozen over the tick, the pair (x_o, theta_k_hat)
    obeys a linear ODE: J_hat(theta_k) zeta_dot is linear in theta_k through
    the kinematic regressor, and the update law is linear in the observer
    error.  The pair forms a lightly damped oscillator whose frequency grows
    with joint speed (alpha * Gamma_k * K_o * sigma(Y_k)^2), which explicit
    Euler destabilizes at high speed, so the subsystem is advanced with the
    exact matrix exponential of the frozen-coefficient system instead.  The
    estimate moves only in range(Y_k^T), which reduces the state to six
    coordinates plus constant- and ramp-forcing slots.

    The measured pose x_e enters with a first-order hold (x_e + tau x_e_dot):
    the update law multiplies x_e by alpha * Gamma_k * K_o, so a zero-order
    hold leaves a half-tick bias in the observer error that integrates into
    a secular drift of theta_hat_k away from the true values even when the
    initial estimate is exact.
    """
    y_k = kinematic_regressor(q, zeta_dot)
    g = 0.0
    if adapt:
        # normalized gradient, matching the controller-side law: keeps the
        # observer/estimate oscillation below what the sample rate can track
        g = (gains.alpha * gains.gamma_k * gains.k_o
             / (1.0 + gains.gamma_k_norm * float(np.sum(y_k * y_k))))
    a = np.zeros((8, 8))
    a[:3, :3] = -gains.alpha * np.eye(3)
    a[:3, 3:6] = y_k @ y_k.T
    a[3:6, :3] = -g * np.eye(3)
    a[:3, 6] = (y_k @ theta_hat_k + kinematic_passthrough(zeta_dot)
                + gains.alpha * x_e)
    a[3:6, 6] = g * x_e
    a[:3, 7] = gains.alpha * x_e_dot
    a[3:6, 7] = g * x_e_dot
    a[7, 6] = 1.0
    u = expm(a * dt) @ np.concatenate([x_o, np.zeros(3), [1.0, 0.0]])
    return u[:3], theta_hat_k + y_k.T @ u[3:6]


class SingularTaskInertia(Exception):
    """The end-effector Jacobian is rank-deficient; the multiplier solve failed."""


class NumericalBlowup(Exception):
    """A state norm exceeded the abort threshold."""


@dataclass
class RobotSpec:
    """One robot of the team: physics, control and its role in the task."""

    params: RobotParams
    gains: ControllerGains
    phi_ti: float = 0.0              # fixed grasp orientation offset
    beta: float = 0.0                # designated load share (scalar)
    q0: NDArray | None = None        # initial configuration (6,)
    subtask: object | None = None    # (t, base_xy, base_v) -> (x_sd, x_sd_dot)
    error_dyn: float = 0.0           # initial relative error of theta_hat_d
    error_kin: float = 0.0           # initial relative error of theta_hat_k


@dataclass
class RobotState:
    q: NDArray
    zeta_dot: NDArray


@dataclass
class WorldState:
    robots: list[RobotState]
    x_obj: NDArray | None
    xd_obj: NDArray | None
    t: float


class MessageBus:
    """Per-tick snapshots of (delta_x_o, delta_x_o_dot) with access control.

    Readers always see the *previous* tick's snapshot (publishes go to a
    pending buffer swapped in at the end of the controller phase), and an
    agent may only read its own record or an in-neighbor's; violations are
    denied and logged.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self._nbrs = [set(neighbors(topology, i)) for i in range(topology.n_agents)]
        self._snapshot: dict[int, object] = {}
        self._pending: dict[int, object] = {}
        self.reads = 0
        self.denied: list[tuple[int, int]] = []

    def publish(self, agent: int, record) -> None:
        self._pending[agent] = record

    def swap(self) -> None:
        self._snapshot = self._pending
        self._pending = {}

    def read(self, reader: int, source: int):
        if source != reader and source not in self._nbrs[reader]:
            self.denied.append((reader, source))
            raise PermissionError(
                f"agent {reader} may not read agent {source} (not a neighbor)")
        self.reads += 1
        return self._snapshot[source]


@dataclass
class SimulationResult:
    """Logged time series (K samples) plus audits and the final state."""

    t: NDArray                  # (K,)
    q: NDArray                  # (K, N, 6)
    zeta_dot: NDArray           # (K, N, 5)
    x_e: NDArray                # (K, N, 3)
    x_hat_d: NDArray            # (K, N, 3)
    x_o: NDArray                # (K, N, 3)
    delta: NDArray              # (K, N, 3) allocation errors
    f_e: NDArray                # (K, N, 3) measured contact wrenches
    f_o: NDArray                # (K, 3) net object wrench
    obj_pose: NDArray           # (K, 3) operational-point (or centroid) pose
    beta_r: NDArray             # (K, N) realized scalar load shares (held)
    s_norm: NDArray             # (K, N)
    tau: NDArray                # (K, N, 5)
    drift: NDArray              # (K,) max grasp-constraint violation
    eq44: NDArray               # (K, N) sliding-identity residual, true theta_k
    x_tilde_o: NDArray          # (K, N, 3) observer errors
    lyapunov: NDArray           # (K,)
    lambda_v: NDArray           # (K, N) nonholonomic multipliers (diagnostic)
    bus_reads: int
    bus_denied: list
    world: WorldState
    wall_time: float


def interaction_forces(qs, zeta_dots, taus, specs: list[RobotSpec],
                       theta_ks, obj: ObjectModel, x_obj, xd_obj,
                       baumgarte=(1.0, 100.0)):
    """Closed-form grasp constraint forces for the coupled system.

    Solves  [blockdiag(J_e M_r^-1 J_e^T) + G_o^T M_o^-1 G_o] F = a_free - b
    where a_free is each robot's unconstrained task acceleration and b holds
    the object-side centripetal terms (-w^2 r_i, 0) plus Baumgarte feedback
    on the constraint error.  Returns

        (f_e (N,3), acc_obj (3,), zeta_ddot (N,5), drift)

    with f_e the wrench each robot applies to the object (the sensor sign
    convention) and drift the largest constraint-error norm.
    """
    n = len(specs)
    phi_o, omega = x_obj[2], xd_obj[2]
    rot = rot2(phi_o)
    r_w = np.stack([rot @ obj.r_body(i) for i in range(n)])
    jo = np.stack([object_jacobian(r) for r in r_w])
    m_o_diag = np.array([obj.mass, obj.mass, obj.inertia_z])

    qa = np.asarray(qs)
    zda = np.asarray(zeta_dots)
    ta = np.asarray(taus)
    th = np.asarray(theta_ks)
    m_r, c_r = batched_reduced_dynamics(qa, zda, [s.params for s in specs])
    a = np.cumsum(qa[:, 2:], axis=1)
    rb = np.array([s.params.wheel_radius / s.params.axle_half_width
                   for s in specs])
    phid = rb * (zda[:, 0] - zda[:, 1])
    a_dot = phid[:, None] + np.concatenate(
        [np.zeros((n, 1)), np.cumsum(zda[:, 2:], axis=1)], axis=1)
    j_e = jacobian_passthrough() + np.einsum(
        "nk,nkij->nij", th, jacobian_basis_batch(a))
    j_e_dot = np.einsum("nk,nkij->nij", th, jacobian_basis_dot_batch(a, a_dot))
    try:
        sols = np.linalg.solve(m_r, np.concatenate(
            [(ta - np.einsum("nij,nj->ni", c_r, zda))[:, :, None],
             j_e.transpose(0, 2, 1)], axis=2))
    except np.linalg.LinAlgError as exc:
        raise SingularTaskInertia(f"robot inertia solve failed: q={qa}") from exc

    lengths = np.stack([[s.params.base_to_arm_offset, *s.params.link_lengths]
                        for s in specs])
    con = np.empty((n, 3))
    con[:, 0] = qa[:, 0] + (lengths * np.cos(a)).sum(1) - (x_obj[0] + r_w[:, 0])
    con[:, 1] = qa[:, 1] + (lengths * np.sin(a)).sum(1) - (x_obj[1] + r_w[:, 1])
    con[:, 2] = a[:, 3] - (phi_o + np.array([s.phi_ti for s in specs]))
    drift = float(np.linalg.norm(con, axis=1).max())
    c_dot = np.einsum("nij,nj->ni", j_e, zda) - jo @ xd_obj
    xi, om_b = baumgarte
    b_vec = np.zeros((n, 3))
    b_vec[:, :2] = -omega**2 * r_w
    b_vec -= 2.0 * xi * om_b * c_dot + om_b**2 * con

    k_mat = np.einsum("iab,b,jcb->iajc", jo, 1.0 / m_o_diag, jo).reshape(3 * n, 3 * n)
    blocks = j_e @ sols[:, :, 1:]
    for i in range(n):
        k_mat[3 * i:3 * i + 3, 3 * i:3 * i + 3] += blocks[i]
    rhs_vec = (np.einsum("nij,nj->ni", j_e, sols[:, :, 0])
               + np.einsum("nij,nj->ni", j_e_dot, zda) - b_vec).ravel()
    try:
        f = np.linalg.solve(k_mat, rhs_vec)
    except np.linalg.LinAlgError as exc:
        raise SingularTaskInertia(
            f"task-inertia solve failed at x_obj={x_obj}, q={qa}") from exc
    f_e = f.reshape(n, 3)
    zeta_ddot = sols[:, :, 0] - (sols[:, :, 1:] @ f_e[:, :, None])[:, :, 0]
    f_o = np.einsum("iba,ib->a", jo, f_e)  # sum J_o,i^T f_e,i
    acc_obj = f_o / m_o_diag
    return f_e, acc_obj, zeta_ddot, drift


class Simulation:
    """Tick loop for one scenario (object optional: pure formation tracking)."""

    def __init__(self, topology: Topology, specs: list[RobotSpec],
                 alloc: AllocationSolution, obj: ObjectModel | None = None,
                 x_obj0: NDArray | None = None,
                 ecct_lever: NDArray | None = None,
                 dt: float = 1e-3, adapt: bool = True,
                 wrench_regulation: bool = True,
                 f_id=None, baumgarte=(1.0, 100.0), blowup_norm: float = 1e6):
        self.topology = topology
        self.specs = specs
        self.alloc = alloc
        self.obj = obj
        self.ecct_lever = ecct_lever
        self.dt = float(dt)
        self.adapt = adapt
        self.wrench_regulation = wrench_regulation
        self.f_id = f_id            # None or (t, i) -> (3,)
        self.baumgarte = baumgarte
        self.blowup_norm = blowup_norm
        n = len(specs)
        self._n = n
        self._th_k = [true_theta_k(s.params) for s in specs]
        self._th_obj = [true_theta_obj(obj, i) if obj is not None else np.zeros(4)
                        for i in range(n)]
        self._th_d = [true_theta_d(specs[i].params, self._th_obj[i]) for i in range(n)]
        self._th_id = [true_theta_id(specs[i].params,
                                     obj.r_body(i) if obj is not None else np.zeros(2))
                       for i in range(n)]
        for s in specs:
            s.gains.validate()

        self._y = np.zeros(11 * n + (6 if obj is not None else 0))
        for i, s in enumerate(specs):
            if s.q0 is None:
                raise ValueError(f"robot {i} has no initial configuration")
            self._y[11 * i:11 * i + 6] = s.q0
        if obj is not None:
            if x_obj0 is None:
                raise ValueError("an object scenario needs its initial pose")
            self._y[11 * n:11 * n + 3] = x_obj0
        self.memories = [self._initial_memory(i) for i in range(n)]
        self.t = 0.0

    def _initial_memory(self, i: int) -> AgentMemory:
        s = self.specs[i]
        x_e = forward_kinematics(s.q0, s.params)
        return AgentMemory(
            x_o=x_e.copy(),
            coupling_integral=np.zeros(3),
            theta_hat_k=(1.0 + s.error_kin) * self._th_k[i],
            theta_hat_d=(1.0 + s.error_dyn) * self._th_d[i],
            theta_hat_id=(1.0 + s.error_dyn) * self._th_id[i],
        )

    # --- plant -----------------------------------------------------------

    def _plant_rates(self, y: NDArray, taus, collect: bool = False):
        n = self._n
        ydot = np.zeros_like(y)
        qs = [y[11 * i:11 * i + 6] for i in range(n)]
        zds = [y[11 * i + 6:11 * i + 11] for i in range(n)]
        for i, s in enumerate(self.specs):
            ydot[11 * i:11 * i + 3] = h_matrix(qs[i][2], s.params) @ zds[i][:2]
            ydot[11 * i + 3:11 * i + 6] = zds[i][2:]
        diag = None
        if self.obj is None:
            zda = np.asarray(zds)
            m_r, c_r = batched_reduced_dynamics(
                np.asarray(qs), zda, [s.params for s in self.specs])
            zdd = np.linalg.solve(
                m_r, (np.asarray(taus)
                      - np.einsum("nij,nj->ni", c_r, zda))[:, :, None])[:, :, 0]
            for i in range(n):
                ydot[11 * i + 6:11 * i + 11] = zdd[i]
            if collect:
                diag = (np.zeros((n, 3)), np.zeros(3), 0.0)
        else:
            x_obj = y[11 * n:11 * n + 3]
            xd_obj = y[11 * n + 3:]
            f_e, acc_obj, zdd, drift = interaction_forces(
                qs, zds, taus, self.specs, self._th_k, self.obj, x_obj, xd_obj,
                baumgarte=self.baumgarte)
            for i in range(n):
                ydot[11 * i + 6:11 * i + 11] = zdd[i]
            ydot[11 * n:11 * n + 3] = xd_obj
            ydot[11 * n + 3:] = acc_obj
            if collect:
                diag = (f_e, acc_obj, drift)
        return ydot, diag

    # --- diagnostics ------------------------------------------------------

    def _eq44_residual(self, i, q, zd, out):
        # ground truth enters only through the parameter error and the true
        # end-effector rate; the left-hand side uses the agent's estimated
        # Jacobian, which is what the sliding identity is stated in
        j_true = reduced_jacobian(q, self._th_k[i])
        j_hat = reduced_jacobian(q, self.memories[i].theta_hat_k)
        y_k = kinematic_regressor(q, zd)
        th_err = self.memories[i].theta_hat_k - self._th_k[i]
        x_tilde_dot = out.x_o_dot - j_true @ zd
        return float(np.linalg.norm(
            j_hat @ out.s - (out.s_x + y_k @ th_err - x_tilde_dot)))

    def _lyapunov(self, qs, zds, outs):
        v = 0.0
        for i, s in enumerate(self.specs):
            g = s.gains
            m_r, _, _ = reduced_dynamics(qs[i], zds[i], s.params)
            m_s = m_r
            if self.obj is not None:
                phi_obj = self._y[11 * self._n + 2]
                j_phi = d_matrix(rot2(phi_obj) @ self.obj.r_body(i)) @ \
                    reduced_jacobian(qs[i], self._th_k[i])
                m_o = np.array([self.obj.mass, self.obj.mass, self.obj.inertia_z])
                m_s = m_r + s.beta * (j_phi.T * m_o) @ j_phi
            mem = self.memories[i]
            e = outs[i].e
            v += 0.5 * outs[i].s @ m_s @ outs[i].s
            v += (1.0 - 1.0 / g.k_eps) * g.k_s * g.lam * (e @ e)
            v += 0.5 * g.alpha * g.k_o * (outs[i].x_tilde_o @ outs[i].x_tilde_o)
            td = mem.theta_hat_d - self._th_d[i]
            tk = mem.theta_hat_k - self._th_k[i]
            ti = mem.theta_hat_id - self._th_id[i]
            v += 0.5 * (td @ td) / g.gamma_d + 0.5 * (tk @ tk) / g.gamma_k
            v += 0.5 * (ti @ ti) / g.gamma_id
        return v

    def _lambda_v(self, i, q, zd, zdd, tau, f_e_i):
        """Nonholonomic multiplier of robot i (diagnostic, full coordinates).

        From the full 6-coordinate dynamics M qdd + C qd = B tau - J^T F_e
        + A_v^T lambda, with A_v the unit no-slip row, lambda is the
        projection of the generalized-force residual onto A_v^T.
        """
        s = self.specs[i]
        phid = s.params.wheel_radius / s.params.axle_half_width * (zd[0] - zd[1])
        t_m = t_matrix(q[2], s.params)
        q_dot = t_m @ zd
        q_ddot = t_m @ zdd + t_matrix_dot(q[2], phid, s.params) @ zd
        m, c, _ = joint_dynamics(q, q_dot, s.params)
        gen = m @ q_ddot + c @ q_dot - input_map(q[2], s.params) @ tau
        if f_e_i is not None:
            gen += _full_jacobian(q, s.params).T @ f_e_i
        a_v = nonholonomic_row(q[2])
        return float(a_v @ gen[:3])

    # --- tick loop --------------------------------------------------------

    def run(self, t_final: float, log_every: int = 10,
            abort=None) -> SimulationResult:
        dt, n = self.dt, self._n
        steps = int(round(t_final / dt))
        n_log = steps // log_every + 1
        L = {name: np.zeros(shape) for name, shape in [
            ("t", (n_log,)), ("q", (n_log, n, 6)), ("zeta_dot", (n_log, n, 5)),
            ("x_e", (n_log, n, 3)), ("x_hat_d", (n_log, n, 3)),
            ("x_o", (n_log, n, 3)), ("delta", (n_log, n, 3)),
            ("f_e", (n_log, n, 3)), ("f_o", (n_log, 3)), ("obj_pose", (n_log, 3)),
            ("beta_r", (n_log, n)), ("s_norm", (n_log, n)),
            ("tau", (n_log, n, 5)), ("drift", (n_log,)), ("eq44", (n_log, n)),
            ("x_tilde_o", (n_log, n, 3)), ("lyapunov", (n_log,)),
            ("lambda_v", (n_log, n))]}
        bus = MessageBus(self.topology)
        nbr_lists = [sorted(neighbors(self.topology, i)) for i in range(n)]
        dfd = 1e-4  # step for differencing the smooth reference signals
        last_beta_r = np.zeros(n)
        t0_wall = time.perf_counter()

        def agent_records(t, y, x_hat, x_hat_dot):
            recs = []
            for i in range(n):
                q = y[11 * i:11 * i + 6]
                zd = y[11 * i + 6:11 * i + 11]
                x_e = forward_kinematics(q, self.specs[i].params)
                j_hat = reduced_jacobian(q, self.memories[i].theta_hat_k)
                x_o_dot, _ = observer_rate(self.memories[i].x_o, x_e, j_hat, zd,
                                           self.specs[i].gains.alpha)
                recs.append((self.memories[i].x_o - x_hat[i],
                             x_o_dot - x_hat_dot[i], x_e))
            return recs

        # seed the bus so tick 0 reads a well-defined (t = 0) snapshot
        x_hat, x_hat_dot = self.alloc.sample(0.0)
        for i, rec in enumerate(agent_records(0.0, self._y, x_hat, x_hat_dot)):
            bus.publish(i, rec[:2])
        bus.swap()

        for k in range(steps + 1):
            t = k * dt
            if abort is not None and abort():
                steps = k - 1
                n_log = (steps // log_every + 1) if steps >= 0 else 0
                L = {name: arr[:n_log] for name, arr in L.items()}
                break
            x_hat, x_hat_dot = self.alloc.sample(t)
            t_lo = max(t - dfd, 0.0)
            _, xhd_lo = self.alloc.sample(t_lo)
            _, xhd_hi = self.alloc.sample(t + dfd)
            x_hat_ddot = (xhd_hi - xhd_lo) / (t + dfd - t_lo)
            recs = agent_records(t, self._y, x_hat, x_hat_dot)
            outs, taus, kin_snap = [], [], []
            for i, s in enumerate(self.specs):
                q = self._y[11 * i:11 * i + 6].copy()
                zd = self._y[11 * i + 6:11 * i + 11].copy()
                kin_snap.append((q, zd))
                nbr = [bus.read(i, j) for j in nbr_lists[i]]
                sub = None
                if s.subtask is not None:
                    th0 = self.memories[i].theta_hat_k[0]
                    v_b = th0 * (zd[0] + zd[1]) * np.array(
                        [np.cos(q[2]), np.sin(q[2])])
                    x_sd, x_sd_dot = s.subtask(t, q[:2], v_b)
                    _, xsd_lo = s.subtask(t_lo, q[:2], v_b)
                    _, xsd_hi = s.subtask(t + dfd, q[:2], v_b)
                    x_sd_ddot = (xsd_hi - xsd_lo) / (t + dfd - t_lo)
                    sub = (np.array([q[0], q[2]]), x_sd, x_sd_dot, x_sd_ddot)
                f_id = (np.zeros(3) if self.f_id is None
                        else np.asarray(self.f_id(t, i), dtype=float))
                out = controller_step(
                    t, q, zd, recs[i][2], self.memories[i],
                    x_hat[i], x_hat_dot[i],
                    [r[0] for r in nbr], [r[1] for r in nbr],
                    s.beta, f_id, s.phi_ti, s.gains,
                    subtask=sub, adapt=self.adapt,
                    wrench_regulation=self.wrench_regulation,
                    x_hat_d_ddot=x_hat_ddot[i])
                outs.append(out)
                taus.append(out.tau)
            for i, rec in enumerate(recs):
                bus.publish(i, rec[:2])
            bus.swap()

            k1, diag = self._plant_rates(self._y, taus, collect=True)
            if k % log_every == 0:
                self._log_row(L, k // log_every, t, x_hat, recs, outs, taus,
                              diag, k1, last_beta_r)
            if k == steps:
                break
            k2, _ = self._plant_rates(self._y + 0.5 * dt * k1, taus)
            k3, _ = self._plant_rates(self._y + 0.5 * dt * k2, taus)
            k4, _ = self._plant_rates(self._y + dt * k3, taus)
            self._y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            for i, out in enumerate(outs):
                m = self.memories[i]
                q_i, zd_i = kin_snap[i]
                x_e_dot_i = reduced_jacobian(q_i, self._th_k[i]) @ zd_i
                m.x_o, m.theta_hat_k = observer_adaptation_step(
                    m.x_o, m.theta_hat_k, q_i, zd_i, recs[i][2], x_e_dot_i,
                    self.specs[i].gains, dt, self.adapt)
                m.coupling_integral += dt * out.coupling_dot
                m.theta_hat_d += dt * out.theta_d_dot
                m.theta_hat_id += dt * out.theta_id_dot
            self.t = (k + 1) * dt
            peak = float(np.abs(self._y).max())
            if not np.isfinite(peak) or peak > self.blowup_norm:
                raise NumericalBlowup(
                    f"state norm {peak:.3e} at t={self.t:.3f}s "
                    f"(worst index {int(np.nanargmax(np.abs(self._y)))})")

        world = WorldState(
            robots=[RobotState(self._y[11 * i:11 * i + 6].copy(),
                               self._y[11 * i + 6:11 * i + 11].copy())
                    for i in range(n)],
            x_obj=self._y[11 * n:11 * n + 3].copy() if self.obj is not None else None,
            xd_obj=self._y[11 * n + 3:].copy() if self.obj is not None else None,
            t=self.t)
        return SimulationResult(
            **L, bus_reads=bus.reads, bus_denied=bus.denied, world=world,
            wall_time=time.perf_counter() - t0_wall)

    def _log_row(self, L, r, t, x_hat, recs, outs, taus, diag, k1, last_beta_r):
        n = self._n
        f_e, acc_obj, drift = diag
        with_obj = self.obj is not None
        L["t"][r] = t
        qs, zds = [], []
        for i in range(n):
            q = self._y[11 * i:11 * i + 6]
            zd = self._y[11 * i + 6:11 * i + 11]
            qs.append(q)
            zds.append(zd)
            L["q"][r, i] = q
            L["zeta_dot"][r, i] = zd
            L["x_e"][r, i] = recs[i][2]
            L["x_hat_d"][r, i] = x_hat[i]
            L["x_o"][r, i] = self.memories[i].x_o
            L["s_norm"][r, i] = np.linalg.norm(outs[i].s)
            L["tau"][r, i] = taus[i]
            L["eq44"][r, i] = self._eq44_residual(i, q, zd, outs[i])
            L["x_tilde_o"][r, i] = outs[i].x_tilde_o
            L["lambda_v"][r, i] = self._lambda_v(
                i, q, zd, k1[11 * i + 6:11 * i + 11], taus[i],
                f_e[i] if with_obj else None)
        L["delta"][r] = self.alloc.delta(t)
        L["drift"][r] = drift
        L["lyapunov"][r] = self._lyapunov(qs, zds, outs)
        if with_obj:
            x_obj = self._y[11 * n:11 * n + 3]
            L["f_e"][r] = f_e
            m_o = np.array([self.obj.mass, self.obj.mass, self.obj.inertia_z])
            u = m_o * acc_obj
            L["f_o"][r] = u
            com = np.asarray(self.obj.com_offset, dtype=float)
            L["obj_pose"][r, :2] = x_obj[:2] - rot2(x_obj[2]) @ com
            L["obj_pose"][r, 2] = x_obj[2]
            grasp = build_grasp_map(
                np.stack([rot2(x_obj[2]) @ self.obj.r_body(i) for i in range(n)]))
            beta_r = projected_load_share(f_e, grasp, u)
            held = np.isnan(beta_r)
            beta_r[held] = last_beta_r[held]
            last_beta_r[:] = beta_r
            L["beta_r"][r] = beta_r
        elif self.ecct_lever is not None:
            p = np.mean([rec[2][:2] for rec in recs], axis=0)
            ang = float(np.mean([rec[2][2] for rec in recs]))
            L["obj_pose"][r, :2] = p + rot2(ang) @ self.ecct_lever
            L["obj_pose"][r, 2] = ang
