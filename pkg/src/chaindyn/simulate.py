"""Fixed-step time integration and physics monitors.

One integration step advances positions, attitude quaternions and the
generalized twist together: each stage assembles the augmented system at
the stage state, solves it for accelerations, and evaluates the quaternion
rate from the body-frame angular velocity.  Quaternions are renormalized
once per step.

Closed-loop runs evaluate the port command inside every stage (the
controller runs at the integration rate), so the integrated system is the
genuine closed-loop vector field; the commanded port is applied as the
actual external input, with any disturbance pulses added on top.

Monitors recorded per step: total linear/angular momentum (about the
inertial origin, so conservation statements are exact under zero external
force), joint position/velocity closure gaps, internal joint forces, and
the controller's error-energy diagnostics when a controller is active.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import control as ctl
from . import geom
from .assembly import assemble, mass_rate_blocks, solve_augmented, SolveResult
from .errors import SolverFailed
from .model import ChainSpec, ChainState, constraint_residuals

_METHODS = ("rk4", "semi_implicit_euler")


@dataclass(frozen=True)
class IntegrationConfig:
    """Fixed-step integrator settings."""

    dt: float = 1e-3
    t_end: float = 10.0
    method: str = "rk4"
    renormalize: bool = True
    project_positions: bool = False
    trace_decimation: int = 1

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.t_end < 0.0:
            raise ValueError("t_end must be non-negative")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.trace_decimation < 1:
            raise ValueError("trace_decimation must be >= 1")


@dataclass(frozen=True)
class Pulse:
    """Constant force or moment on one body over [t_start, t_stop)."""

    body: int
    kind: str                 # "force" | "moment"
    vector: np.ndarray
    t_start: float
    t_stop: float
    frame: str = "inertial"   # "inertial" | "body"

    def __post_init__(self):
        object.__setattr__(self, "vector",
                           np.asarray(self.vector, dtype=float).reshape(3))
        if self.kind not in ("force", "moment"):
            raise ValueError("pulse kind must be force or moment")
        if self.frame not in ("inertial", "body"):
            raise ValueError("pulse frame must be inertial or body")
        if not self.t_start < self.t_stop:
            raise ValueError("pulse needs t_start < t_stop")

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_stop


@dataclass
class PulseSchedule:
    """Time-tagged external inputs resolved to inertial components."""

    pulses: tuple = ()

    def __post_init__(self):
        self.pulses = tuple(self.pulses)

    def resolve(self, t: float, state: ChainState):
        """Per-body (forces, moments), inertial components, at time t."""
        n = state.n_bodies
        f = np.zeros((n, 3))
        m = np.zeros((n, 3))
        for p in self.pulses:
            if not p.active(t):
                continue
            vec = p.vector
            if p.frame == "body":
                vec = geom.rotation_from_quat(
                    state.quaternions[p.body]).T @ vec
            (f if p.kind == "force" else m)[p.body] += vec
        return f, m

    def quiet_segments(self, t_end: float):
        """Maximal intervals of [0, t_end] with no active pulse."""
        edges = sorted({0.0, t_end} | {
            t for p in self.pulses for t in (p.t_start, p.t_stop)
            if 0.0 < t < t_end})
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (a + b)
            if not any(p.active(mid) for p in self.pulses):
                out.append((a, b))
        return out


@dataclass
class TraceRecord:
    """One recorded step of a simulation run."""

    time: float
    positions: np.ndarray
    quaternions: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    joint_forces: np.ndarray
    linear_momentum: np.ndarray
    angular_momentum: np.ndarray
    position_gap: float
    velocity_gap: float
    condition_estimate: float
    sliding_norm: float | None = None
    lyapunov_value: float | None = None
    lyapunov_rate: float | None = None
    lyapunov_rate_measured: float | None = None
    jac_sliding_norm: float | None = None
    tracking_error_pos: float | None = None
    tracking_error_att: float | None = None


@dataclass
class Trace:
    """Full run record with array views over the per-step fields."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return self.array("time")

    def final_state(self) -> TraceRecord:
        return self.records[-1]


def _inertia_inertial(spec: ChainSpec, state: ChainState) -> np.ndarray:
    rot = geom.rotations_from_quats(state.quaternions)
    return np.matmul(rot.transpose(0, 2, 1),
                     np.matmul(spec.inertias_body, rot))


def momentum_totals(spec: ChainSpec, state: ChainState):
    """Total linear momentum and angular momentum about the inertial origin."""
    i_inertial = _inertia_inertial(spec, state)
    mv = spec.masses[:, None] * state.lin_vel
    linear = mv.sum(axis=0)
    spin = np.matmul(i_inertial, state.ang_vel[:, :, None])[:, :, 0]
    angular = (np.cross(state.positions, mv) + spin).sum(axis=0)
    return linear, angular


def kinetic_energy(spec: ChainSpec, state: ChainState) -> float:
    i_inertial = _inertia_inertial(spec, state)
    trans = float(np.sum(spec.masses * np.sum(state.lin_vel ** 2, axis=1)))
    spin = np.matmul(i_inertial, state.ang_vel[:, :, None])[:, :, 0]
    rote = float(np.sum(state.ang_vel * spin))
    return 0.5 * (trans + rote)


def potential_energy(spec: ChainSpec, state: ChainState) -> float:
    return -float(np.sum(spec.masses * (state.positions @ spec.gravity)))


def project_positions(spec: ChainSpec, state: ChainState) -> ChainState:
    """Minimal mass-weighted translation that recloses every joint.

    Solves min 0.5 sum m_i |d_i|^2 subject to the joint gaps closing; each
    gap is split between the adjacent bodies inversely to their masses.
    Velocities and attitudes are untouched.
    """
    if spec.n_bodies < 2:
        return state
    gap, _ = constraint_residuals(spec, state)
    n = spec.n_bodies
    # corrections d satisfy d_{j+1} - d_j = gap_j with minimum weighted norm
    jv = np.zeros((3 * (n - 1), 3 * n))
    for j in range(n - 1):
        jv[3 * j:3 * j + 3, 3 * j:3 * j + 3] = -np.eye(3)
        jv[3 * j:3 * j + 3, 3 * j + 3:3 * j + 6] = np.eye(3)
    minv_jt = jv.T / np.repeat(spec.masses, 3)[:, None]
    lam = np.linalg.solve(jv @ minv_jt, gap.ravel())
    delta = (minv_jt @ lam).reshape(n, 3)
    out = state.copy()
    out.positions = state.positions + delta
    return out


def _external_to_arrays(external, t, state, sys):
    """Normalize an external-input callback result to (N,3)+(N,3)."""
    if external is None:
        return None, None
    f, m = external(t, state, sys)
    return f, m


def _derivatives(spec, state, t, external):
    """Stage derivatives: (dr, dq, dnu) plus the stage solve result."""
    sys = assemble(spec, state)
    f, m = _external_to_arrays(external, t, state, sys)
    if f is not None or m is not None:
        n = spec.n_bodies
        tau = np.concatenate([
            np.zeros(3 * n) if f is None else np.asarray(f).ravel(),
            np.zeros(3 * n) if m is None else np.asarray(m).ravel()])
        sys = sys.with_external(tau)
    res = solve_augmented(sys)
    w_body = np.matmul(sys.rotations, state.ang_vel[:, :, None])[:, :, 0]
    qdot = geom.quat_derivatives_batch(state.quaternions, w_body)
    return state.lin_vel.copy(), qdot, res.accel_gen, res


def _stage_state(state, t, dr, dq, dnu, h):
    n = state.n_bodies
    return ChainState(
        positions=state.positions + h * dr,
        quaternions=state.quaternions + h * dq,
        lin_vel=state.lin_vel + h * dnu[:3 * n].reshape(n, 3),
        ang_vel=state.ang_vel + h * dnu[3 * n:].reshape(n, 3),
        time=t + h)


def _rk4_step(spec, state, external, dt):
    t = state.time
    k1 = _derivatives(spec, state, t, external)
    s2 = _stage_state(state, t, k1[0], k1[1], k1[2], dt / 2)
    k2 = _derivatives(spec, s2, t + dt / 2, external)
    s3 = _stage_state(state, t, k2[0], k2[1], k2[2], dt / 2)
    k3 = _derivatives(spec, s3, t + dt / 2, external)
    s4 = _stage_state(state, t, k3[0], k3[1], k3[2], dt)
    k4 = _derivatives(spec, s4, t + dt, external)
    dr = (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
    dq = (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
    dnu = (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]) / 6.0
    n = state.n_bodies
    nxt = ChainState(state.positions + dt * dr,
                     state.quaternions + dt * dq,
                     state.lin_vel + dt * dnu[:3 * n].reshape(n, 3),
                     state.ang_vel + dt * dnu[3 * n:].reshape(n, 3),
                     t + dt)
    return nxt, k1[3]


def _semi_implicit_step(spec, state, external, dt):
    # advance the twist first, then drive the kinematics with the new twist
    n = state.n_bodies
    t = state.time
    _, _, accel, first = _derivatives(spec, state, t, external)
    lin_new = state.lin_vel + dt * accel[:3 * n].reshape(n, 3)
    ang_new = state.ang_vel + dt * accel[3 * n:].reshape(n, 3)
    qdot = np.empty_like(state.quaternions)
    rot = geom.rotations_from_quats(state.quaternions)
    for i in range(n):
        qdot[i] = geom.quat_derivative(state.quaternions[i],
                                       rot[i] @ ang_new[i])
    nxt = ChainState(state.positions + dt * lin_new,
                     state.quaternions + dt * qdot,
                     lin_new, ang_new, t + dt)
    return nxt, first


def step(spec: ChainSpec, state: ChainState, external,
         cfg: IntegrationConfig):
    """Advance one fixed step; returns (next_state, stage-one SolveResult).

    ``external`` is None or a callback ``(t, state, sys) -> (f, m)``
    returning per-body inertial forces and moments; it is evaluated at
    every stage so closed-loop commands see the stage states.
    """
    from .errors import ChainDynError

    try:
        if cfg.method == "rk4":
            nxt, first = _rk4_step(spec, state, external, cfg.dt)
        else:
            nxt, first = _semi_implicit_step(spec, state, external, cfg.dt)
    except SolverFailed:
        raise
    except ChainDynError as exc:
        raise SolverFailed(
            f"step at t={state.time:.6f} failed: {exc}") from exc
    if cfg.renormalize:
        norms = np.linalg.norm(nxt.quaternions, axis=1, keepdims=True)
        nxt.quaternions = nxt.quaternions / norms
    if cfg.project_positions:
        nxt = project_positions(spec, nxt)
    return nxt, first


def _record(spec, state, res, extra=None) -> TraceRecord:
    lin, ang = momentum_totals(spec, state)
    pos_gap, vel_gap = constraint_residuals(spec, state)
    rec = TraceRecord(
        time=state.time,
        positions=state.positions.copy(),
        quaternions=state.quaternions.copy(),
        lin_vel=state.lin_vel.copy(),
        ang_vel=state.ang_vel.copy(),
        joint_forces=res.joint_forces.copy(),
        linear_momentum=lin, angular_momentum=ang,
        position_gap=float(np.max(np.linalg.norm(pos_gap, axis=1))
                           if pos_gap.size else 0.0),
        velocity_gap=float(np.max(np.linalg.norm(vel_gap, axis=1))
                           if vel_gap.size else 0.0),
        condition_estimate=res.condition_estimate)
    if extra:
        for k, v in extra.items():
            setattr(rec, k, v)
    return rec


def _n_steps(cfg: IntegrationConfig) -> int:
    return int(round(cfg.t_end / cfg.dt))


def run_open_loop(spec: ChainSpec, initial: ChainState,
                  pulses: PulseSchedule | None = None,
                  cfg: IntegrationConfig = IntegrationConfig(),
                  compensate_gravity: bool = False) -> Trace:
    """Integrate with scheduled pulses only (no controller).

    ``compensate_gravity`` adds the exact counter-gravity force to every
    body, which keeps momenta conserved while the gravity code path stays
    exercised.
    """
    pulses = pulses or PulseSchedule()
    comp = (-spec.masses[:, None] * spec.gravity if compensate_gravity
            else None)

    def external(t, state, sys):
        f, m = pulses.resolve(t, state)
        if comp is not None:
            f = f + comp
        return f, m

    trace = Trace()
    state = initial.copy()
    sys0 = assemble(spec, state)
    f0, m0 = external(state.time, state, sys0)
    n = spec.n_bodies
    res0 = solve_augmented(sys0.with_external(
        np.concatenate([f0.ravel(), m0.ravel()])))
    trace.records.append(_record(spec, state, res0))
    steps = _n_steps(cfg)
    for k in range(steps):
        state, res = step(spec, state, external, cfg)
        if (k + 1) % cfg.trace_decimation == 0 or k == steps - 1:
            trace.records.append(_record(spec, state, res))
    return trace


def _controller_for(mode: str):
    return {"velocity": ctl.control_velocity,
            "pose": ctl.control_pose,
            "task_space": ctl.control_task_space}[mode]


def run_closed_loop(spec: ChainSpec, initial: ChainState, traj,
                    controller_cfg: ctl.ControllerConfig,
                    cfg: IntegrationConfig = IntegrationConfig(),
                    disturbances: PulseSchedule | None = None) -> Trace:
    """Integrate the ideal-port closed loop: the commanded port is applied
    as the actual external generalized force, plus optional disturbances.

    For the task-space mode the reference-velocity rate is the backward
    difference of the reference velocity across steps; the one-step history
    lives here in the loop, not in the controller.
    """
    disturbances = disturbances or PulseSchedule()
    law = _controller_for(controller_cfg.mode)
    n = spec.n_bodies
    memory = {"prev": None, "rate": np.zeros(6 * n)}

    def command_at(state, sys):
        if controller_cfg.mode == "task_space":
            return ctl.control_task_space(spec, state, sys, traj,
                                          controller_cfg,
                                          nu_ref_rate=memory["rate"])
        return law(spec, state, sys, traj, controller_cfg)

    def external(t, state, sys):
        cmd = command_at(state, sys)
        f, m = disturbances.resolve(t, state)
        f = f + cmd.tau[:3 * n].reshape(n, 3)
        m = m + cmd.tau[3 * n:].reshape(n, 3)
        return f, m

    def step_diagnostics(state):
        """Controller command and measured Lyapunov rate at a step start."""
        sys = assemble(spec, state)
        if controller_cfg.mode == "task_space":
            cmd = ctl.control_task_space(spec, state, sys, traj,
                                         controller_cfg,
                                         prev_ref=memory["prev"])
            memory["rate"] = cmd.nu_ref_rate
            memory["prev"] = (state.time, cmd.nu_ref)
        else:
            cmd = law(spec, state, sys, traj, controller_cfg)
        f, m = disturbances.resolve(state.time, state)
        tau_total = cmd.tau + np.concatenate([f.ravel(), m.ravel()])
        res = solve_augmented(sys.with_external(tau_total))
        # measured dV/dt = s^T M (a - dnu_r) + 0.5 s^T dM/dt s
        s = cmd.sliding_surface
        mdot = mass_rate_blocks(sys)
        s_ang = s[3 * n:].reshape(n, 3)
        quad = float(np.einsum("ni,nij,nj->", s_ang, mdot, s_ang))
        v_rate_meas = float(s @ sys.apply_mass(res.accel_gen
                                               - cmd.nu_ref_rate)) \
            + 0.5 * quad
        extra = {
            "sliding_norm": float(np.linalg.norm(s)),
            "lyapunov_value": cmd.lyapunov_value,
            "lyapunov_rate": cmd.lyapunov_rate,
            "lyapunov_rate_measured": v_rate_meas,
            "jac_sliding_norm": cmd.jac_sliding_norm,
        }
        target = traj.sample(state.time)
        if controller_cfg.mode == "task_space":
            e_task = ctl.task_pose_error(state, target)
            extra["tracking_error_pos"] = float(np.linalg.norm(e_task[:3]))
            extra["tracking_error_att"] = float(
                2.0 * np.arcsin(min(1.0, float(np.linalg.norm(e_task[3:])))))
        else:
            e_pos = state.positions - target.positions
            extra["tracking_error_pos"] = float(
                np.max(np.linalg.norm(e_pos, axis=1)))
            att = 0.0
            for i in range(n):
                q_e = geom.quat_multiply(
                    geom.quat_conjugate(target.quaternions[i]),
                    state.quaternions[i])
                att = max(att, 2.0 * math.asin(
                    min(1.0, float(np.linalg.norm(q_e[1:])))))
            extra["tracking_error_att"] = att
        return res, extra

    trace = Trace()
    state = initial.copy()
    res, extra = step_diagnostics(state)
    trace.records.append(_record(spec, state, res, extra))
    steps = _n_steps(cfg)
    for k in range(steps):
        state, _ = step(spec, state, external, cfg)
        res, extra = step_diagnostics(state)
        if (k + 1) % cfg.trace_decimation == 0 or k == steps - 1:
            trace.records.append(_record(spec, state, res, extra))
    return trace
