"""Scenario files: parsing, validation, canonical writing, run reports.

A scenario is a TOML document with the sections

    [bodies]       mass = [...], inertia = [[9 row-major entries], ...]
    [joints]       attach_parent/attach_child = [[x,y,z], ...],
                   stiffness = [[k_roll,k_pitch,k_yaw], ...]
    [gravity]      vector = [x,y,z], compensated = true|false
    [initial]      base_position/base_euler/base_lin_vel/base_ang_vel,
                   joint_euler = [[roll,pitch,yaw], ...], joint_rates = [...]
    [control]      mode = "open_loop"|"velocity"|"pose"|"task_space",
                   kd/lam/lam_task (scalar, diagonal list, or matrix),
                   obstacle_cutoff, feasibility_tol
    [control.trajectory]    kind = "rest"|"line"|"quintic"|"circle"|"waypoints"
    [[control.obstacles]]   center, radius, gain
    [[pulses]]     body (1-based), kind, frame, vector, t_start, t_stop
    [integration]  dt, t_end, method, renormalize, project_positions,
                   decimation
    [output]       monitor thresholds (momentum_rel_tol, gap_tol, ...)

Paths in [control.trajectory] are relative to the initial configuration
(chain modes: the base; task mode: the end effector), which keeps scenario
files portable.  ``write_scenario`` emits a canonical document whose
re-parse reproduces the scenario field-for-field; its SHA-256 prefix is the
config hash embedded in every output file.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import control as ctl
from . import trajectory
from .model import (BodySpec, ChainSpec, ChainState, JointSpec,
                    assemble_consistent_state, validate_spec)
from .simulate import IntegrationConfig, Pulse, PulseSchedule


class ScenarioError(ValueError):
    """Scenario text failed to parse or validate; message carries details."""


@dataclass
class OutputConfig:
    momentum_rel_tol: float = 1e-8
    gap_tol: float = 1e-6
    velocity_gap_tol: float = 1e-6
    lyapunov_slack: float = 1e-9
    track_tol_pos: float = 1e-3
    track_tol_att: float = 1e-3


@dataclass
class Scenario:
    """Fully parsed scenario, ready to build runnable objects from."""

    spec: ChainSpec
    compensate_gravity: bool
    base_position: np.ndarray
    base_euler: np.ndarray
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    joint_euler: np.ndarray      # (N-1, 3)
    joint_rates: np.ndarray      # (N-1, 3)
    mode: str
    kd: object                   # scalar | (6N,) diag | (6N, 6N)
    lam: object
    lam_task: object
    feasibility_tol: float
    obstacles: tuple             # of (center, radius, gain)
    obstacle_cutoff: float
    traj_kind: str
    traj_params: dict
    pulses: tuple                # of Pulse (0-based body index)
    integration: IntegrationConfig
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def config_hash(self) -> str:
        text = write_scenario(self)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def initial_state(self) -> ChainState:
        return assemble_consistent_state(
            self.spec, self.base_position, self.base_euler,
            self.joint_euler, self.base_lin_vel, self.base_ang_vel,
            self.joint_rates)

    def pulse_schedule(self) -> PulseSchedule:
        return PulseSchedule(self.pulses)

    def controller_config(self):
        if self.mode == "open_loop":
            return None
        obstacles = tuple(ctl.Obstacle(c, r, g)
                          for c, r, g in self.obstacles)
        return ctl.make_controller_config(
            self.spec.n_bodies, self.mode, kd=self.kd,
            lam=self.lam, lam_task=self.lam_task, obstacles=obstacles,
            obstacle_cutoff=self.obstacle_cutoff,
            feasibility_tol=self.feasibility_tol)

    def build_trajectory(self, initial: ChainState):
        if self.mode == "open_loop":
            return None
        path = _build_path(self.traj_kind, self.traj_params)
        if self.mode in ("velocity", "pose"):
            reference = initial.copy()
            reference.lin_vel[:] = 0.0
            reference.ang_vel[:] = 0.0
            offset = np.asarray(
                self.traj_params.get("offset", (0.0, 0.0, 0.0)), dtype=float)
            if self.traj_kind == "rest":
                reference.positions = reference.positions + offset
                return trajectory.ChainTrajectory(reference)
            return trajectory.ChainTrajectory(reference, path)
        # task space: path anchored at the initial end-effector pose
        ee_pos = initial.positions[-1]
        ee_att = initial.quaternions[-1]
        anchored = _anchor_path(self.traj_kind, self.traj_params, path,
                                ee_pos)
        return trajectory.TaskTrajectory(anchored, ee_att)


def _build_path(kind: str, params: dict):
    if kind == "rest":
        return trajectory.RestPath()
    if kind == "line":
        return trajectory.LinePath(params.get("velocity", (0, 0, 0)))
    if kind == "quintic":
        return trajectory.QuinticPath(params.get("offset", (0, 0, 0)),
                                      params.get("duration", 1.0))
    if kind == "circle":
        return trajectory.CirclePath(
            radius=params.get("radius", 0.1),
            period=params.get("period", 5.0),
            center=params.get("center_offset", (0, 0, 0)),
            normal=params.get("normal", (0, 0, 1)),
            phase=params.get("phase", 0.0))
    if kind == "waypoints":
        return trajectory.WaypointPath(params["times"], params["points"])
    raise ScenarioError(f"[control.trajectory] unknown kind {kind!r}")


def _anchor_path(kind, params, path, anchor):
    """Shift a relative path so it starts from the anchor point."""
    if kind == "rest":
        return trajectory.LinePath((0, 0, 0), offset=anchor)
    if kind == "line":
        return trajectory.LinePath(params.get("velocity", (0, 0, 0)),
                                   offset=anchor)
    if kind == "quintic":
        return _OffsetPath(path, anchor)
    if kind == "circle":
        # center is given relative to the anchor point
        return trajectory.CirclePath(
            radius=params.get("radius", 0.1),
            period=params.get("period", 5.0),
            center=np.asarray(params.get("center_offset", (0, 0, 0)),
                              dtype=float) + anchor,
            normal=params.get("normal", (0, 0, 1)),
            phase=params.get("phase", 0.0))
    if kind == "waypoints":
        return _OffsetPath(path, anchor)
    raise ScenarioError(f"[control.trajectory] unknown kind {kind!r}")


class _OffsetPath:
    """A relative path shifted by a constant anchor offset."""

    def __init__(self, inner, offset):
        self.inner = inner
        self.offset = np.asarray(offset, dtype=float)

    def sample(self, t):
        pos, vel, acc = self.inner.sample(t)
        return pos + self.offset, vel, acc


# ------------------------------------------------------------------ parsing ---

def _get(table, key, default=None, required=False, where=""):
    if key in table:
        return table[key]
    if required:
        raise ScenarioError(f"[{where}] missing required key {key!r}")
    return default


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text; raises ScenarioError with
    line-anchored (syntax) or key-anchored (semantic) diagnostics."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"TOML syntax error: {exc}") from exc

    for section in ("bodies", "gravity", "initial", "integration"):
        if section not in doc:
            raise ScenarioError(f"missing [{section}] section")

    bodies_tbl = doc["bodies"]
    masses = _get(bodies_tbl, "mass", required=True, where="bodies")
    inertias = _get(bodies_tbl, "inertia", required=True, where="bodies")
    if len(masses) != len(inertias):
        raise ScenarioError("[bodies] mass and inertia counts differ")
    bodies = []
    for i, (m, ine) in enumerate(zip(masses, inertias)):
        if len(ine) != 9:
            raise ScenarioError(
                f"[bodies] inertia[{i}] needs 9 row-major entries")
        bodies.append(BodySpec(m, np.asarray(ine, dtype=float).reshape(3, 3)))

    joints_tbl = doc.get("joints", {})
    ap = joints_tbl.get("attach_parent", [])
    ac = joints_tbl.get("attach_child", [])
    ks = joints_tbl.get("stiffness", [[0.0, 0.0, 0.0]] * len(ap))
    if not (len(ap) == len(ac) == len(ks)):
        raise ScenarioError("[joints] arrays must have equal length")
    joints = [JointSpec(a, c, k) for a, c, k in zip(ap, ac, ks)]

    grav_tbl = doc["gravity"]
    gravity = np.asarray(_get(grav_tbl, "vector", (0.0, 0.0, 0.0)),
                         dtype=float)
    compensated = bool(_get(grav_tbl, "compensated", False))

    spec = ChainSpec(bodies, joints, gravity)
    violations = validate_spec(spec)
    if violations:
        raise ScenarioError(
            "invalid chain: " + "; ".join(str(v) for v in violations))

    n = spec.n_bodies
    init = doc["initial"]
    joint_euler = np.asarray(init.get("joint_euler",
                                      [[0.0] * 3] * (n - 1)), dtype=float)
    joint_rates = np.asarray(init.get("joint_rates",
                                      [[0.0] * 3] * (n - 1)), dtype=float)
    joint_euler = joint_euler.reshape(n - 1, 3) if n > 1 else \
        np.zeros((0, 3))
    joint_rates = joint_rates.reshape(n - 1, 3) if n > 1 else \
        np.zeros((0, 3))

    ctl_tbl = doc.get("control", {})
    mode = ctl_tbl.get("mode", "open_loop")
    if mode not in ("open_loop", "velocity", "pose", "task_space"):
        raise ScenarioError(f"[control] unknown mode {mode!r}")
    if compensated and mode != "open_loop":
        raise ScenarioError(
            "[gravity] compensated=true only applies to open_loop runs; "
            "closed-loop laws already cancel gravity through the port")
    traj_tbl = ctl_tbl.get("trajectory", {})
    traj_kind = traj_tbl.get("kind", "rest")
    traj_params = {k: v for k, v in traj_tbl.items() if k != "kind"}
    obstacles = tuple(
        (np.asarray(o["center"], dtype=float), float(o["radius"]),
         float(o["gain"]))
        for o in ctl_tbl.get("obstacles", []))

    pulses = []
    for i, p in enumerate(doc.get("pulses", [])):
        body = int(_get(p, "body", required=True, where=f"pulses[{i}]"))
        if not 1 <= body <= n:
            raise ScenarioError(
                f"[pulses] entry {i}: body {body} out of range 1..{n}")
        pulses.append(Pulse(
            body=body - 1, kind=_get(p, "kind", "force"),
            vector=np.asarray(_get(p, "vector", required=True,
                                   where=f"pulses[{i}]"), dtype=float),
            t_start=float(_get(p, "t_start", required=True,
                               where=f"pulses[{i}]")),
            t_stop=float(_get(p, "t_stop", required=True,
                              where=f"pulses[{i}]")),
            frame=_get(p, "frame", "inertial")))

    integ_tbl = doc["integration"]
    integration = IntegrationConfig(
        dt=float(_get(integ_tbl, "dt", 1e-3)),
        t_end=float(_get(integ_tbl, "t_end", required=True,
                         where="integration")),
        method=_get(integ_tbl, "method", "rk4"),
        renormalize=bool(_get(integ_tbl, "renormalize", True)),
        project_positions=bool(_get(integ_tbl, "project_positions", False)),
        trace_decimation=int(_get(integ_tbl, "decimation", 1)))

    out_tbl = doc.get("output", {})
    output = OutputConfig(
        momentum_rel_tol=float(out_tbl.get("momentum_rel_tol", 1e-8)),
        gap_tol=float(out_tbl.get("gap_tol", 1e-6)),
        velocity_gap_tol=float(out_tbl.get("velocity_gap_tol", 1e-6)),
        lyapunov_slack=float(out_tbl.get("lyapunov_slack", 1e-9)),
        track_tol_pos=float(out_tbl.get("track_tol_pos", 1e-3)),
        track_tol_att=float(out_tbl.get("track_tol_att", 1e-3)))

    def gain(key, default):
        v = ctl_tbl.get(key, default)
        return np.asarray(v, dtype=float) if isinstance(v, list) else v

    return Scenario(
        spec=spec, compensate_gravity=compensated,
        base_position=np.asarray(init.get("base_position", (0, 0, 0)),
                                 dtype=float),
        base_euler=np.asarray(init.get("base_euler", (0, 0, 0)), dtype=float),
        base_lin_vel=np.asarray(init.get("base_lin_vel", (0, 0, 0)),
                                dtype=float),
        base_ang_vel=np.asarray(init.get("base_ang_vel", (0, 0, 0)),
                                dtype=float),
        joint_euler=joint_euler, joint_rates=joint_rates,
        mode=mode, kd=gain("kd", 10.0), lam=gain("lam", 2.0),
        lam_task=gain("lam_task", 2.0),
        feasibility_tol=float(ctl_tbl.get("feasibility_tol", 1e-6)),
        obstacles=obstacles,
        obstacle_cutoff=float(ctl_tbl.get("obstacle_cutoff", 0.0)),
        traj_kind=traj_kind, traj_params=traj_params,
        pulses=tuple(pulses), integration=integration, output=output)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ------------------------------------------------------------------ writing ---

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot format {type(v)}")


def write_scenario(s: Scenario) -> str:
    """Emit the canonical TOML text for a scenario (round-trip stable)."""
    spec = s.spec
    lines = ["[bodies]"]
    lines.append("mass = " + _fmt([b.mass for b in spec.bodies]))
    lines.append("inertia = " + _fmt([list(b.inertia_body.ravel())
                                      for b in spec.bodies]))
    lines.append("")
    lines.append("[joints]")
    lines.append("attach_parent = " + _fmt([list(j.attach_parent)
                                            for j in spec.joints]))
    lines.append("attach_child = " + _fmt([list(j.attach_child)
                                           for j in spec.joints]))
    lines.append("stiffness = " + _fmt([list(j.stiffness)
                                        for j in spec.joints]))
    lines.append("")
    lines.append("[gravity]")
    lines.append("vector = " + _fmt(spec.gravity))
    lines.append("compensated = " + _fmt(s.compensate_gravity))
    lines.append("")
    lines.append("[initial]")
    lines.append("base_position = " + _fmt(s.base_position))
    lines.append("base_euler = " + _fmt(s.base_euler))
    lines.append("base_lin_vel = " + _fmt(s.base_lin_vel))
    lines.append("base_ang_vel = " + _fmt(s.base_ang_vel))
    lines.append("joint_euler = " + _fmt([list(r) for r in s.joint_euler]))
    lines.append("joint_rates = " + _fmt([list(r) for r in s.joint_rates]))
    lines.append("")
    lines.append("[control]")
    lines.append("mode = " + _fmt(s.mode))
    for key in ("kd", "lam", "lam_task"):
        v = getattr(s, key)
        if isinstance(v, np.ndarray):
            v = [list(r) for r in v] if v.ndim == 2 else list(v)
        lines.append(f"{key} = " + _fmt(v))
    lines.append("feasibility_tol = " + _fmt(s.feasibility_tol))
    lines.append("obstacle_cutoff = " + _fmt(s.obstacle_cutoff))
    lines.append("")
    lines.append("[control.trajectory]")
    lines.append("kind = " + _fmt(s.traj_kind))
    for k in sorted(s.traj_params):
        lines.append(f"{k} = " + _fmt(s.traj_params[k]))
    for center, radius, gain in s.obstacles:
        lines.append("")
        lines.append("[[control.obstacles]]")
        lines.append("center = " + _fmt(center))
        lines.append("radius = " + _fmt(radius))
        lines.append("gain = " + _fmt(gain))
    for p in s.pulses:
        lines.append("")
        lines.append("[[pulses]]")
        lines.append("body = " + _fmt(p.body + 1))
        lines.append("kind = " + _fmt(p.kind))
        lines.append("frame = " + _fmt(p.frame))
        lines.append("vector = " + _fmt(p.vector))
        lines.append("t_start = " + _fmt(p.t_start))
        lines.append("t_stop = " + _fmt(p.t_stop))
    lines.append("")
    lines.append("[integration]")
    lines.append("dt = " + _fmt(s.integration.dt))
    lines.append("t_end = " + _fmt(s.integration.t_end))
    lines.append("method = " + _fmt(s.integration.method))
    lines.append("renormalize = " + _fmt(s.integration.renormalize))
    lines.append("project_positions = "
                 + _fmt(s.integration.project_positions))
    lines.append("decimation = " + _fmt(s.integration.trace_decimation))
    lines.append("")
    lines.append("[output]")
    o = s.output
    lines.append("momentum_rel_tol = " + _fmt(o.momentum_rel_tol))
    lines.append("gap_tol = " + _fmt(o.gap_tol))
    lines.append("velocity_gap_tol = " + _fmt(o.velocity_gap_tol))
    lines.append("lyapunov_slack = " + _fmt(o.lyapunov_slack))
    lines.append("track_tol_pos = " + _fmt(o.track_tol_pos))
    lines.append("track_tol_att = " + _fmt(o.track_tol_att))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- report ---

@dataclass
class MonitorResult:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


@dataclass
class RunReport:
    """Machine-readable summary of one run."""

    scenario_hash: str
    mode: str
    wall_clock: float
    monitors: list

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.monitors)

    def render(self) -> str:
        lines = [f"config_hash = {self.scenario_hash}",
                 f"mode = {self.mode}",
                 f"wall_clock_s = {self.wall_clock:.3f}",
                 f"overall = {'PASS' if self.passed else 'FAIL'}"]
        for m in self.monitors:
            status = "PASS" if m.passed else "FAIL"
            note = f"  ({m.note})" if m.note else ""
            lines.append(f"{status} {m.name}: {m.value:.3e} "
                         f"(threshold {m.threshold:.3e}){note}")
        return "\n".join(lines) + "\n"


def evaluate_monitors(scenario: Scenario, trace) -> list:
    """Run the physics monitors over a finished trace."""
    out = scenario.output
    monitors = []
    gap = float(np.max(trace.array("position_gap")))
    monitors.append(MonitorResult("max_position_gap", gap, out.gap_tol,
                                  gap < out.gap_tol))
    vgap = float(np.max(trace.array("velocity_gap")))
    monitors.append(MonitorResult("max_velocity_gap", vgap,
                                  out.velocity_gap_tol,
                                  vgap < out.velocity_gap_tol))
    if scenario.mode == "open_loop":
        dev = _quiet_momentum_deviation(scenario, trace)
        if dev is not None:
            monitors.append(MonitorResult(
                "momentum_conservation", dev, out.momentum_rel_tol,
                dev < out.momentum_rel_tol,
                "max relative drift over pulse-free segments"))
    else:
        v = trace.array("lyapunov_value")
        worst_rise = float(np.max(np.diff(v))) if len(v) > 1 else 0.0
        monitors.append(MonitorResult(
            "lyapunov_monotone", worst_rise, out.lyapunov_slack,
            worst_rise <= out.lyapunov_slack,
            "largest per-step increase of the error energy"))
        final = trace.final_state()
        monitors.append(MonitorResult(
            "final_tracking_pos", float(final.tracking_error_pos),
            out.track_tol_pos,
            final.tracking_error_pos < out.track_tol_pos))
        monitors.append(MonitorResult(
            "final_tracking_att", float(final.tracking_error_att),
            out.track_tol_att,
            final.tracking_error_att < out.track_tol_att))
    return monitors


def _quiet_momentum_deviation(scenario: Scenario, trace):
    """Worst relative momentum drift over pulse-free spans (None if none)."""
    sched = scenario.pulse_schedule()
    t_end = scenario.integration.t_end
    dt = scenario.integration.dt
    times = trace.times
    lin = trace.array("linear_momentum")
    ang = trace.array("angular_momentum")
    worst = None
    for a, b in sched.quiet_segments(t_end):
        # stay clear of the switching steps
        mask = (times >= a + 2 * dt) & (times <= b - 2 * dt) if b - a > 6 * dt \
            else np.zeros_like(times, dtype=bool)
        if mask.sum() < 2:
            continue
        for arr in (lin, ang):
            seg = arr[mask]
            ref = seg[0]
            scale = max(float(np.linalg.norm(ref)), 1e-9)
            dev = float(np.max(np.linalg.norm(seg - ref, axis=1))) / scale
            worst = dev if worst is None else max(worst, dev)
    return worst


TRACE_COLUMNS_DOC = (
    "time, then per body: pos xyz, quat wxyz, vel xyz, omega xyz; then per "
    "joint: fj xyz; then lin_mom xyz, ang_mom xyz, pos_gap, vel_gap; "
    "closed-loop runs append s_norm, V, Vdot_design, Vdot_measured, "
    "js_norm, track_err_pos, track_err_att")


def trace_to_csv(trace, scenario: Scenario, path) -> None:
    """Write the trace with the documented fixed column order."""
    n = scenario.spec.n_bodies
    closed = scenario.mode != "open_loop"
    cols = ["time"]
    for i in range(n):
        cols += [f"b{i}_pos_{a}" for a in "xyz"]
        cols += [f"b{i}_quat_{a}" for a in "wxyz"]
        cols += [f"b{i}_vel_{a}" for a in "xyz"]
        cols += [f"b{i}_omega_{a}" for a in "xyz"]
    for j in range(n - 1):
        cols += [f"j{j}_f_{a}" for a in "xyz"]
    cols += ["lin_mom_x", "lin_mom_y", "lin_mom_z",
             "ang_mom_x", "ang_mom_y", "ang_mom_z", "pos_gap", "vel_gap"]
    if closed:
        cols += ["s_norm", "V", "Vdot_design", "Vdot_measured", "js_norm",
                 "track_err_pos", "track_err_att"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={scenario.config_hash}\n")
        fh.write(",".join(cols) + "\n")
        for r in trace:
            row = [r.time]
            for i in range(n):
                row += list(r.positions[i]) + list(r.quaternions[i]) \
                    + list(r.lin_vel[i]) + list(r.ang_vel[i])
            row += list(r.joint_forces)
            row += list(r.linear_momentum) + list(r.angular_momentum)
            row += [r.position_gap, r.velocity_gap]
            if closed:
                row += [r.sliding_norm, r.lyapunov_value, r.lyapunov_rate,
                        r.lyapunov_rate_measured, r.jac_sliding_norm,
                        r.tracking_error_pos, r.tracking_error_att]
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
