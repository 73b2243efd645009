"""Scenario configuration and the bundled benchmark cases.

A ScenarioConfig is a flat, YAML-serializable description of one run:
team topology, robot/object parameters, grasp geometry, the desired task
trajectory in a shared basis, load shares, parameter-error levels and
control gains.  ``build_simulation`` turns it into a ready engine instance
(including the allocation presolve).

Bundled presets:
  case1_1 / case1_2  transport with two load-share schemes, exact parameters
  case2              formation tracking of a virtual structure (no object),
                     with a base-position/heading subtask per robot
  case3_da / case3_na  20 s transport under parameter uncertainty, with and
                     without control-level adaptation
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from coopnmm.allocation import (
    AgentTaskGeometry,
    TrajectoryBasis,
    desired_agent_pose,
    eval_desired,
    presolve_allocation,
)
from coopnmm.control import ControllerGains
from coopnmm.dynamics import ObjectModel
from coopnmm.engine import RobotSpec, Simulation
from coopnmm.kinematics import GraspOffset, RobotParams, inverse_kinematics, rot2
from coopnmm.topology import Topology, build_laplacian


class ConfigError(Exception):
    """A scenario configuration is inconsistent or incomplete."""


_SQUARE = [[1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]
_PAPER_ADJ = [[0, 0, 0, 0], [1, 0, 1, 0], [0, 1, 0, 0], [1, 0, 0, 0]]
_ROBOT = dict(link_lengths=(0.4, 0.285, 0.35), link_com_offsets=(0.28, 0.20, 0.25),
              link_masses=(6.5, 5.0, 2.6), link_inertias=(0.12, 0.42, 0.10),
              base_mass=10.0, base_inertia=1.0, wheel_radius=0.15,
              axle_half_width=0.5, base_to_arm_offset=0.5)
# benchmark parameter-error levels (per robot, relative)
_ERR_TRAJ = [0.0, 0.1712, 0.3294, 0.4567]
_ERR_DYN = [0.20, 0.25, 0.15, 0.20]
_ERR_KIN = [0.10, 0.15, 0.15, 0.10]
_TRANSPORT_GAINS = dict(eps=5.0, gamma_d=5.0)


@dataclass
class ScenarioConfig:
    """Complete, serializable description of one simulation run."""

    case: str
    mode: str = "da"                     # "da" (adaptive) | "na" (frozen)
    dt: float = 1e-3
    duration: float = 10.0
    log_every: int = 10
    seed: int = 0                        # reserved; bundled runs are deterministic
    out_dir: str = "runs"
    adjacency: list = field(default_factory=lambda: [r[:] for r in _PAPER_ADJ])
    access_flags: list = field(default_factory=lambda: [1, 0, 0, 0])
    robot: dict = field(default_factory=lambda: dict(_ROBOT))
    object: dict | None = None           # mass, inertia_z, com_offset
    grasp_offsets: list = field(default_factory=lambda: [r[:] for r in _SQUARE])
    phi_ti: list = field(default_factory=lambda: [0.0] * 4)
    ecct_lever: list | None = None       # centroid -> virtual frame (no object)
    trajectory: dict = field(default_factory=dict)
    subtask: dict | None = None
    betas: list = field(default_factory=lambda: [0.0] * 4)
    error_traj: list = field(default_factory=lambda: [0.0] * 4)
    error_dyn: list = field(default_factory=lambda: [0.0] * 4)
    error_kin: list = field(default_factory=lambda: [0.0] * 4)
    gains: dict = field(default_factory=dict)
    wrench_regulation: bool = True

    @property
    def n_agents(self) -> int:
        return len(self.grasp_offsets)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "case" not in data:
            raise ConfigError("config needs a 'case' identifier")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        n = self.n_agents
        if self.mode not in ("da", "na"):
            raise ConfigError(f"mode must be 'da' or 'na', got {self.mode!r}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.log_every < 1:
            raise ConfigError("log_every must be a positive integer")
        adj = np.asarray(self.adjacency, dtype=float)
        if adj.shape != (n, n):
            raise ConfigError("adjacency must be n_agents x n_agents")
        for name in ("phi_ti", "betas", "error_traj", "error_dyn", "error_kin",
                     "access_flags"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} needs one entry per agent")
        if self.object is not None and abs(sum(self.betas) - 1.0) > 1e-9:
            raise ConfigError("load shares must sum to 1 when an object is grasped")
        if not self.trajectory:
            raise ConfigError("trajectory specification is missing")
        try:
            ControllerGains(**self.gains).validate()
        except TypeError as exc:
            raise ConfigError(f"bad gain entry: {exc}") from exc

    # --- YAML round trip --------------------------------------------------

    def to_yaml(self, path) -> None:
        import yaml
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path) -> "ScenarioConfig":
        import yaml
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path} does not contain a mapping")
        return cls.from_dict(data)


def _poly_pair(coeffs, t: float):
    """(value, rate) of a raw power-series polynomial at t."""
    c = np.asarray(coeffs, dtype=float)
    powers = t ** np.arange(len(c))
    val = float(c @ powers)
    rate = float(sum(k * c[k] * t**(k - 1) for k in range(1, len(c))))
    return val, rate


def trajectory_basis(traj: dict) -> TrajectoryBasis:
    return TrajectoryBasis(time_scale=traj.get("time_scale", 1.0),
                           poly_order=traj.get("poly_order", 4),
                           frequencies=tuple(traj.get("frequencies", ())))


def trajectory_coefficients(traj: dict) -> NDArray:
    """(3, l) true coefficients of the desired task trajectory."""
    basis = trajectory_basis(traj)
    sin_cos = traj.get("sin_cos")
    rows = []
    for c in range(3):
        sc = None if sin_cos is None else sin_cos[c]
        rows.append(basis.coefficients(traj["poly"][c], sc))
    return np.stack(rows)


def _subtask_fn(sub: dict, i: int):
    x_poly = sub["x_poly"]
    h_poly = sub["heading_poly"]
    off = sub["heading_offsets"][i]

    def fn(t: float, base_xy=None, base_v=None):
        x, xd = _poly_pair(x_poly, t)
        h, hd = _poly_pair(h_poly, t)
        return np.array([x, h + off]), np.array([xd, hd])
    return fn


def _path_tangent(theta_true, basis, t: float, eps: float = 1e-6):
    """(psi, psi_dot) of the task translational velocity direction.

    Falls back to the acceleration direction near standstill (start of the
    polynomial trajectories) so the heading reference is always defined.
    """
    from coopnmm.allocation import eval_desired as _ed
    _, v3, a3 = _ed(t, theta_true, basis)
    v, a = v3[:2], a3[:2]
    sp2 = float(v @ v)
    if sp2 < eps**2:
        return float(np.arctan2(a[1], a[0])), 0.0
    psi = float(np.arctan2(v[1], v[0]))
    psi_dot = float((v[0] * a[1] - v[1] * a[0]) / sp2)
    return psi, psi_dot


_ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _carried_subtask_fn(theta_true, basis, geom, u0, phi_d0, l_m,
                        t_ramp: float = 0.3, eps: float = 1e-5,
                        k_cross: float = 1.0):
    """Posture-keeping base reference from a drivable base path.

    The arm shape is fixed by the shoulder-to-wrist distance, and the
    shoulder sits a forward offset l_m ahead of the base along the heading.
    So the *shoulder* reference point is carried rigidly with the agent's
    desired end-effector frame (constant offset u0 at grasp time), the
    heading reference is the tangent of that carried path, and the base
    reference is the shoulder point pulled back by l_m along the heading.
    Carrying the base point directly would let the shoulder swing on the
    l_m lever as the tangent rotates relative to the object, stretching
    the elbow toward singularity over a few seconds.

    The tangent is discontinuous at standstill (it jumps to the curvature
    direction the instant the path starts), so the heading reference is
    blended from the initial tangent to the live tangent with a smooth ramp
    whose rate is returned consistently -- the rate output is the exact time
    derivative of the position output (at frozen measurements), which the
    reference-acceleration feedforward relies on.

    Tracking (base x, heading) alone leaves the cross-track coordinate of
    the base as an open-loop integral of the heading error, which drifts
    over tens of seconds and slowly stretches the arm toward singularity.
    When the measured base position/velocity are supplied, the heading
    reference is biased against the cross-track error (steer-toward-path),
    closing that loop through the existing subtask channel.
    """

    r_ti = np.asarray(geom.r_ti, dtype=float)
    u_phase = geom.phi_ti - phi_d0

    def point(tt: float):
        x_td, v_td, a_td = eval_desired(tt, theta_true, basis)
        o, w_o, wd_o = x_td[2], v_td[2], a_td[2]
        off = rot2(o) @ r_ti + rot2(o + u_phase) @ u0
        offp = _ROT90 @ off
        return (x_td[:2] + off, v_td[:2] + w_o * offp,
                a_td[:2] + wd_o * offp - w_o * w_o * off)

    pdd0 = point(0.0)[2]
    psi0 = float(np.arctan2(pdd0[1], pdd0[0]))

    def fn(t: float, base_xy=None, base_v=None):
        s, sd, sdd = point(t)
        sp2 = float(sd @ sd)
        if sp2 < 1e-12:
            psi_raw, psi_dot_raw = psi0, 0.0
        else:
            psi_raw = float(np.arctan2(sd[1], sd[0]))
            psi_dot_raw = float((sd[0] * sdd[1] - sd[1] * sdd[0]) / sp2)
        dpsi = float(np.arctan2(np.sin(psi_raw - psi0), np.cos(psi_raw - psi0)))
        den = t * t + t_ramp * t_ramp
        ramp = t * t / den
        ramp_dot = 2.0 * t * t_ramp * t_ramp / (den * den)
        psi = psi0 + ramp * dpsi
        psi_dot = ramp_dot * dpsi + ramp * psi_dot_raw
        ehat = np.array([np.cos(psi), np.sin(psi)])
        nrm = np.array([-np.sin(psi), np.cos(psi)])
        p = s - l_m * ehat
        pd = sd - l_m * psi_dot * nrm
        if base_xy is not None:
            nrm_dot = -psi_dot * ehat
            e_c = float(nrm @ (base_xy - p))
            e_c_dot = float(nrm_dot @ (base_xy - p) + nrm @ (base_v - pd))
            psi, psi_dot = psi - k_cross * e_c, psi_dot - k_cross * e_c_dot
        return np.array([p[0], psi]), np.array([pd[0], psi_dot])
    return fn


def build_simulation(config: ScenarioConfig) -> Simulation:
    """Assemble engine, controllers and the presolved allocation estimator."""
    config.validate()
    n = config.n_agents
    topology = Topology(n_agents=n,
                        adjacency=np.asarray(config.adjacency, dtype=float),
                        access_flags=np.asarray(config.access_flags, dtype=float))
    bundle = build_laplacian(topology)
    basis = trajectory_basis(config.trajectory)
    theta_true = trajectory_coefficients(config.trajectory)
    geoms = [AgentTaskGeometry(tuple(config.grasp_offsets[i]), config.phi_ti[i])
             for i in range(n)]
    gains = ControllerGains(**config.gains)
    params = RobotParams(**config.robot)

    x_hat0 = np.stack([desired_agent_pose(0.0, theta_true, basis, g)[0]
                       for g in geoms])
    theta_hat0 = np.stack([(1.0 + config.error_traj[i]) * theta_true
                           for i in range(n)])
    alloc = presolve_allocation(
        topology, bundle, basis, theta_true, geoms, x_hat0, theta_hat0,
        kappa=gains.kappa, gamma_tr=gains.gamma_tr,
        t_final=max(config.duration, config.dt))

    sub = config.subtask
    tangent = sub is not None and sub.get("mode") == "tangent"
    specs = []
    for i in range(n):
        heading = None
        if tangent:
            heading = _path_tangent(theta_true, basis, 0.0)[0]
        elif sub is not None:
            heading = sub["heading_offsets"][i]
        q0 = inverse_kinematics(x_hat0[i], params, base_heading=heading)
        if tangent:
            # one refinement pass: the start heading is the tangent of the
            # carried shoulder path, which itself depends on the placement
            l_m = params.base_to_arm_offset
            phi_d0 = x_hat0[i][2]

            def shoulder_offset(q):
                ehat = np.array([np.cos(q[2]), np.sin(q[2])])
                return q[:2] + l_m * ehat - x_hat0[i][:2]

            probe = _carried_subtask_fn(theta_true, basis, geoms[i],
                                        shoulder_offset(q0), phi_d0, l_m)
            q0 = inverse_kinematics(x_hat0[i], params,
                                    base_heading=probe(0.0)[0][1])
            subtask = _carried_subtask_fn(theta_true, basis, geoms[i],
                                          shoulder_offset(q0), phi_d0, l_m)
        elif sub is not None:
            subtask = _subtask_fn(sub, i)
        else:
            subtask = None
        specs.append(RobotSpec(
            params=params, gains=gains, phi_ti=config.phi_ti[i],
            beta=config.betas[i], q0=q0, subtask=subtask,
            error_dyn=config.error_dyn[i], error_kin=config.error_kin[i]))

    obj = None
    x_obj0 = None
    if config.object is not None:
        obj = ObjectModel(
            mass=config.object["mass"], inertia_z=config.object["inertia_z"],
            com_offset=tuple(config.object["com_offset"]),
            grasp_offsets=tuple(GraspOffset(tuple(config.grasp_offsets[i]),
                                            config.phi_ti[i]) for i in range(n)))
        x_td0, _, _ = eval_desired(0.0, theta_true, basis)
        com = x_td0[:2] + rot2(x_td0[2]) @ np.asarray(config.object["com_offset"])
        x_obj0 = np.array([com[0], com[1], x_td0[2]])

    return Simulation(
        topology=topology, specs=specs, alloc=alloc, obj=obj, x_obj0=x_obj0,
        ecct_lever=(np.asarray(config.ecct_lever, dtype=float)
                    if config.ecct_lever is not None else None),
        dt=config.dt, adapt=(config.mode == "da"),
        wrench_regulation=config.wrench_regulation)


# --- presets ---------------------------------------------------------------

def _transport_trajectory(rotating: bool) -> dict:
    phi = [0.0, 0.0, np.pi / 200.0, -np.pi / 3000.0] if rotating else [0.0] * 4
    return dict(poly=[[0.0, 0.0, 0.2, 0.04],
                      [0.0, 0.0, 0.3, -0.02],
                      phi])


def _case1(betas) -> ScenarioConfig:
    return ScenarioConfig(
        case="case1", duration=10.0,
        object=dict(mass=6.0, inertia_z=8.0, com_offset=[1.0, 0.0]),
        trajectory=_transport_trajectory(rotating=True),
        subtask=dict(mode="tangent"),
        betas=list(betas), gains=dict(_TRANSPORT_GAINS))


def _case2() -> ScenarioConfig:
    lever = 1.04 * (np.sqrt(3.0) + 1.0)
    corners = [[c[0] - lever, c[1]] for c in _SQUARE]
    return ScenarioConfig(
        case="case2", duration=10.0, wrench_regulation=False,
        ecct_lever=[lever, 0.0], grasp_offsets=corners,
        trajectory=dict(
            frequencies=[0.1 * np.pi, 0.2 * np.pi],
            poly=[[lever + 0.1, 0.0, 0.15, -0.01],
                  [0.1, 0.0, 0.0, 0.0],
                  [np.pi / 15.0, 0.0, -np.pi / 500.0, np.pi / 7500.0]],
            sin_cos=[[[0.0, 0.0], [0.0, 0.0]],
                     [[0.3, 0.1], [0.3, -0.1]],
                     [[0.0, 0.0], [0.0, 0.0]]]),
        subtask=dict(x_poly=[0.1, 0.0, 0.15, -0.01],
                     heading_poly=[0.0, 0.0, np.pi / 25.0, -2.0 * np.pi / 375.0],
                     heading_offsets=[0.0, -np.pi / 3.0, np.pi / 3.0, 0.0]),
        error_traj=list(_ERR_TRAJ), error_dyn=list(_ERR_DYN),
        error_kin=list(_ERR_KIN))


def _case3(mode: str) -> ScenarioConfig:
    return ScenarioConfig(
        case="case3", mode=mode, duration=20.0,
        object=dict(mass=6.0, inertia_z=8.0, com_offset=[1.0, 0.0]),
        trajectory=_transport_trajectory(rotating=False),
        subtask=dict(mode="tangent"),
        betas=[0.5, 0.5, 0.0, 0.0], gains=dict(_TRANSPORT_GAINS),
        error_traj=list(_ERR_TRAJ), error_dyn=list(_ERR_DYN),
        error_kin=list(_ERR_KIN))


_PRESETS = {
    "case1_1": lambda: _case1([0.0, 0.8, 0.2, 0.0]),
    "case1_2": lambda: _case1([0.35, 0.3, 0.2, 0.15]),
    "case2": _case2,
    "case3_da": lambda: _case3("da"),
    "case3_na": lambda: _case3("na"),
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str) -> ScenarioConfig:
    try:
        cfg = _PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    cfg.validate()
    return cfg
