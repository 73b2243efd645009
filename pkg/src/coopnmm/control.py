"""Per-agent adaptive synchronization controller.

Signal flow per control evaluation (one agent, one integrator stage):

    observer      x_o_dot = J_hat zeta_dot - alpha (x_o - x_e)
    coupling      e = (x_o - x_hat_d) + integral of eps * sum_j (own - nbr)
    reference     zeta_r_dot: damped task-priority inverse of the primary
                  task rate, subtask folded into the null space
    torque        tau = Y_Id th_Id + tau_r + Y_d th_d - (J^T Ks J + Kth) s
    adaptation    gradient laws on th_d, th_k, th_Id

All "hatted" kinematic quantities use the agent's own estimate theta_hat_k;
ground-truth parameters never enter this module.  The reference
acceleration is the backward difference of zeta_r_dot cached by the engine
across ticks (held constant within a step), consistent with the
discretization order.

The non-adaptive baseline reuses the same code path with ``adapt=False``:
parameter estimates stay frozen at their (erroneous) initial values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from coopnmm.dynamics import dynamic_regressor, internal_wrench_regressor
from coopnmm.kinematics import (
    absolute_angles,
    jacobian_basis,
    jacobian_passthrough,
    kinematic_regressor,
    null_projector,
    reduced_jacobian,
    sr_pseudoinverse,
    subtask_jacobian,
)


class GainConditionError(Exception):
    """A stability gain inequality is violated at configuration time."""


@dataclass(frozen=True)
class ControllerGains:
    """Scalar/diagonal gains of the adaptive scheme (defaults: Case 2)."""

    alpha: float = 20.0          # observer gain
    eps: float = 30.0            # synchronization coupling gain
    lam: float = 10.0            # Lambda, scalar * I_3
    delta_sr: float = 0.05       # singular-region width of the damped inverse
    lam_max: float = 0.1         # max damping factor
    k_s: float = 5.0             # task-space damping
    k_theta: float = 10.0        # joint-space damping
    k_o: float = 20.0            # observer feedback weight in the k-update
    gamma_d: float = 0.001       # dynamic adaptation gain
    gamma_k: float = 5.0         # kinematic adaptation gain
    gamma_id: float = 0.1        # internal-wrench adaptation gain
    kappa: float = 2.0           # allocation consensus gain
    gamma_tr: float = 20.0       # trajectory-coefficient adaptation gain
    k_eps: float = 2.0           # analysis constant K_eps
    k_rc: float = 0.1            # robust-gain constant (sensorless form)
    k_r_max: float = 1e4         # robust-gain clamp at s -> 0
    k_sub: float = 10.0          # subtask position feedback
    gamma_d_norm: float = 3e-4   # gradient normalization of the theta_d law
    gamma_k_norm: float = 0.02   # gradient normalization of the theta_k law
    s_deadzone: float = 2e-3     # ||s|| below which the theta_d law freezes

    def validate(self, theta_bound: float = 0.0) -> None:
        """Stability inequalities; ``theta_bound`` bounds the C_s mismatch."""
        if self.k_theta <= theta_bound:
            raise GainConditionError("K_theta must exceed the C-mismatch bound")
        if self.k_eps <= 1.0:
            raise GainConditionError("K_eps must exceed 1")
        if self.k_o <= (self.k_eps - 1.0) * self.k_s:
            raise GainConditionError("K_o must exceed (K_eps - 1) K_s")
        for name in ("alpha", "eps", "lam", "k_s", "kappa"):
            if getattr(self, name) <= 0:
                raise GainConditionError(f"{name} must be positive")


@dataclass
class AgentMemory:
    """Continuous adaptive state owned by one agent (integrated by the engine)."""

    x_o: NDArray                 # (3,) observed pose
    coupling_integral: NDArray   # (3,)
    theta_hat_k: NDArray         # (9,)
    theta_hat_d: NDArray         # (p_d,)
    theta_hat_id: NDArray        # (30,)

    def copy(self) -> "AgentMemory":
        return AgentMemory(self.x_o.copy(), self.coupling_integral.copy(),
                           self.theta_hat_k.copy(), self.theta_hat_d.copy(),
                           self.theta_hat_id.copy())


@dataclass
class ControlOutput:
    tau: NDArray
    x_o_dot: NDArray
    coupling_dot: NDArray
    theta_k_dot: NDArray
    theta_d_dot: NDArray
    theta_id_dot: NDArray
    s: NDArray
    s_x: NDArray
    zeta_r_ddot: NDArray
    e: NDArray
    x_tilde_o: NDArray
    zeta_r_dot: NDArray
    k_r: float


def observer_rate(x_o: NDArray, x_e: NDArray, j_hat: NDArray,
                  zeta_dot: NDArray, alpha: float):
    """(x_o_dot, x_tilde_o) of the Cartesian velocity observer."""
    x_tilde = x_o - x_e
    return j_hat @ zeta_dot - alpha * x_tilde, x_tilde


def coupling_error(delta_xo: NDArray, delta_xo_dot: NDArray,
                   nbr_delta_xo: list[NDArray], nbr_delta_xo_dot: list[NDArray],
                   integral: NDArray, eps: float):
    """(e, e_dot, integral_rate) of the cross-coupling error."""
    sync = sum((delta_xo - d for d in nbr_delta_xo), np.zeros(3))
    sync_dot = sum((delta_xo_dot - d for d in nbr_delta_xo_dot), np.zeros(3))
    e = delta_xo + integral
    return e, delta_xo_dot + eps * sync, eps * sync, eps * sync_dot


def reference_velocity(j_hat: NDArray, x_pr_dot: NDArray, gains: ControllerGains,
                       j_sub: NDArray | None = None,
                       x_sr_dot: NDArray | None = None) -> NDArray:
    """Task-priority reference joint velocity (primary task + null-space subtask)."""
    j_pinv = sr_pseudoinverse(j_hat, gains.delta_sr, gains.lam_max)
    zeta_r_dot = j_pinv @ x_pr_dot
    if j_sub is not None:
        n_hat = null_projector(j_hat, j_pinv)
        jn = j_sub @ n_hat
        jn_pinv = sr_pseudoinverse(jn, gains.delta_sr, gains.lam_max)
        zeta_r_dot = zeta_r_dot + n_hat @ jn_pinv @ (x_sr_dot - j_sub @ zeta_r_dot)
    return zeta_r_dot


def robust_gain(j_hat_s_norm: float, gains: ControllerGains) -> float:
    """Sensorless robust gain k_r = k_rc / ||J_hat s||, clamped near s = 0."""
    if j_hat_s_norm < gains.k_rc / gains.k_r_max:
        return gains.k_r_max
    return gains.k_rc / j_hat_s_norm


def controller_step(t: float, q: NDArray, zeta_dot: NDArray, x_e: NDArray,
                    memory: AgentMemory,
                    x_hat_d: NDArray, x_hat_d_dot: NDArray,
                    nbr_delta_xo: list[NDArray], nbr_delta_xo_dot: list[NDArray],
                    beta_scalar: float, f_id: NDArray, phi_ti: float,
                    gains: ControllerGains, zeta_r_ddot: NDArray | None = None,
                    x_hat_d_ddot: NDArray | None = None,
                    subtask=None, adapt: bool = True,
                    wrench_regulation: bool = True) -> ControlOutput:
    """One control evaluation for one agent.

    ``subtask`` is None or (x_s, x_sd, x_sd_dot, x_sd_ddot) with x_s the
    measured base (x, heading).  The reference acceleration is either passed
    explicitly (``zeta_r_ddot``) or assembled as the chain-rule derivative of
    the reference-velocity map along the analytic rates of its inputs (which
    needs ``x_hat_d_ddot``); backward-differencing the reference velocity
    across control ticks is deliberately avoided — it feeds the measurement
    loops inside zeta_r_dot back with a 1/dt gain and one tick of delay,
    which destabilizes the sampled loop at speed.
    """
    e_basis = jacobian_basis(absolute_angles(q))
    j_hat = jacobian_passthrough() + np.einsum(
        "k,kij->ij", memory.theta_hat_k, e_basis)
    x_o_dot, x_tilde_o = observer_rate(memory.x_o, x_e, j_hat, zeta_dot,
                                       gains.alpha)
    delta_xo = memory.x_o - x_hat_d
    delta_xo_dot = x_o_dot - x_hat_d_dot
    e, e_dot, coupling_dot, coupling_ddot = coupling_error(
        delta_xo, delta_xo_dot, nbr_delta_xo, nbr_delta_xo_dot,
        memory.coupling_integral, gains.eps)
    x_pr_dot = x_hat_d_dot - coupling_dot - gains.lam * e

    j_sub = x_sr_dot = x_sr_ddot = None
    x_sd_ddot = None
    if subtask is not None:
        x_s, x_sd, x_sd_dot, x_sd_ddot = subtask
        j_sub = subtask_jacobian(q[2], memory.theta_hat_k)
        x_sr_dot = x_sd_dot + gains.k_sub * (x_sd - x_s)
    zeta_r_dot = reference_velocity(j_hat, x_pr_dot, gains, j_sub, x_sr_dot)

    y_k = np.einsum("kij,j->ik", e_basis, zeta_dot)
    if adapt:
        # same normalization as the engine-side integrator: the loop
        # frequency sqrt(alpha Gamma_k K_o) sigma(Y_k) grows with joint speed
        # past what a 1 kHz loop can realize, so the gain is rolled off with
        # the regressor norm
        k_scale = 1.0 + gains.gamma_k_norm * float(np.sum(y_k * y_k))
        theta_k_dot = (-gains.alpha * gains.gamma_k * gains.k_o / k_scale
                       * (y_k.T @ x_tilde_o))
    else:
        theta_k_dot = np.zeros_like(memory.theta_hat_k)

    if zeta_r_ddot is None:
        if x_hat_d_ddot is None:
            zeta_r_ddot = np.zeros(5)
        else:
            # directional derivative of the reference-velocity map along the
            # analytic input rates (estimated base twist, adaptation rate,
            # reference/coupling accelerations)
            th = memory.theta_hat_k
            wheel_sum, wheel_diff = zeta_dot[0] + zeta_dot[1], zeta_dot[0] - zeta_dot[1]
            q_dot = np.array([th[0] * np.cos(q[2]) * wheel_sum,
                              th[0] * np.sin(q[2]) * wheel_sum,
                              th[1] * wheel_diff,
                              zeta_dot[2], zeta_dot[3], zeta_dot[4]])
            x_pr_ddot = x_hat_d_ddot - coupling_ddot - gains.lam * e_dot
            # theta_hat_k is deliberately held fixed here: its update law is
            # a fast averaged oscillation whose instantaneous rate vastly
            # overstates the realized per-tick drift, and feeding that
            # measurement term into the acceleration feedforward destabilizes
            # the loop.
            dlt = 1e-6
            q2 = q + dlt * q_dot
            j_hat2 = reduced_jacobian(q2, th)
            j_sub2 = x_sr_dot2 = None
            if subtask is not None:
                x_s_dot = j_sub @ zeta_dot
                x_sr_ddot = x_sd_ddot + gains.k_sub * (x_sd_dot - x_s_dot)
                j_sub2 = subtask_jacobian(q2[2], th)
                x_sr_dot2 = x_sr_dot + dlt * x_sr_ddot
            zr2 = reference_velocity(j_hat2, x_pr_dot + dlt * x_pr_ddot,
                                     gains, j_sub2, x_sr_dot2)
            zeta_r_ddot = (zr2 - zeta_r_dot) / dlt
    s = zeta_dot - zeta_r_dot
    s_x = e_dot + gains.lam * e

    phi_obj = x_e[2] - phi_ti
    y_d = dynamic_regressor(q, zeta_dot, zeta_r_dot, zeta_r_ddot,
                            beta_scalar, phi_obj)

    tau = y_d @ memory.theta_hat_d - (j_hat.T @ (gains.k_s * (j_hat @ s))
                                      + gains.k_theta * s)
    k_r = 0.0
    if wrench_regulation:
        k_r = robust_gain(float(np.linalg.norm(j_hat @ s)), gains)
        tau = tau - k_r * (j_hat.T @ (j_hat @ s))
        theta_id_dot = np.zeros_like(memory.theta_hat_id)
        if np.any(f_id):
            y_id = internal_wrench_regressor(q, f_id, phi_obj)
            tau = tau + y_id @ memory.theta_hat_id
            if adapt:
                theta_id_dot = -gains.gamma_id * (y_id.T @ s)
    else:
        theta_id_dot = np.zeros_like(memory.theta_hat_id)

    s_norm = float(np.linalg.norm(s))
    if adapt and s_norm > gains.s_deadzone:
        # normalized gradient: the regressor norm grows with joint speed and
        # the raw law closes an undamped (s, theta_d) oscillation whose
        # frequency outruns the control rate; normalization caps the loop
        # gain without changing the update direction or its equilibria.
        # The smooth deadzone stops the discretization-level residual of s
        # (which is correlated with the regressor) from integrating into a
        # secular parameter drift once tracking has converged.
        act = 1.0 - gains.s_deadzone / s_norm
        scale = 1.0 + gains.gamma_d_norm * float(np.sum(y_d * y_d))
        theta_d_dot = -gains.gamma_d * act / scale * (y_d.T @ s)
    else:
        theta_d_dot = np.zeros_like(memory.theta_hat_d)

    return ControlOutput(tau=tau, x_o_dot=x_o_dot, coupling_dot=coupling_dot,
                         theta_k_dot=theta_k_dot, theta_d_dot=theta_d_dot,
                         theta_id_dot=theta_id_dot, s=s, s_x=s_x, e=e, zeta_r_ddot=zeta_r_ddot,
                         x_tilde_o=x_tilde_o, zeta_r_dot=zeta_r_dot, k_r=k_r)
