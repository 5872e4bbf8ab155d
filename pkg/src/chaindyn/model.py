"""Physical description and dynamic state of a free-floating serial chain.

A chain is N rigid bodies joined by N-1 ball joints with optional triaxial
torsional stiffness.  Body frames sit at each body's center of mass.  Joint
attachment vectors point from a body's center of mass to the joint point and
are given in that body's frame, so the inertial joint position seen from the
parent side is ``r_parent + R_parent @ attach_parent``.

State is stored per body as inertial position, attitude quaternion, inertial
linear velocity and inertial angular velocity.  Angular velocities use
inertial components throughout the package; the only conversion to body
components happens inside quaternion propagation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import SpecInvalid


def _as_vec3(x) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(3)
    a.flags.writeable = False
    return a


def _as_mat3(x) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(3, 3)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class BodySpec:
    """One rigid body: mass [kg] and body-frame inertia about the COM."""

    mass: float
    inertia_body: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "inertia_body", _as_mat3(self.inertia_body))


@dataclass(frozen=True, eq=False)
class JointSpec:
    """Ball joint between consecutive bodies.

    ``attach_parent`` / ``attach_child``: COM-to-joint vectors [m] in the
    parent / child body frame.  ``stiffness``: torsional spring constants
    (K_roll, K_pitch, K_yaw) [N*m/rad] acting on the relative 3-2-1 Euler
    angles across the joint; zero disables the spring axis.
    """

    attach_parent: np.ndarray
    attach_child: np.ndarray
    stiffness: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "attach_parent", _as_vec3(self.attach_parent))
        object.__setattr__(self, "attach_child", _as_vec3(self.attach_child))
        object.__setattr__(self, "stiffness", _as_vec3(self.stiffness))


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Immutable chain description: N bodies, N-1 joints, gravity vector."""

    bodies: tuple
    joints: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "gravity", _as_vec3(self.gravity))
        # flat arrays used by the assembly hot path
        n = len(self.bodies)
        masses = np.array([b.mass for b in self.bodies], dtype=float)
        inertias = np.array([b.inertia_body for b in self.bodies], dtype=float)
        if self.joints:
            ap = np.array([j.attach_parent for j in self.joints], dtype=float)
            ac = np.array([j.attach_child for j in self.joints], dtype=float)
            ks = np.array([j.stiffness for j in self.joints], dtype=float)
        else:
            ap = np.zeros((0, 3))
            ac = np.zeros((0, 3))
            ks = np.zeros((0, 3))
        for a in (masses, inertias, ap, ac, ks):
            a.flags.writeable = False
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "inertias_body", inertias.reshape(n, 3, 3))
        object.__setattr__(self, "attach_parent", ap)
        object.__setattr__(self, "attach_child", ac)
        object.__setattr__(self, "stiffness", ks)
        object.__setattr__(self, "has_stiffness", bool(np.any(ks != 0.0)))

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)


@dataclass
class Violation:
    """One broken invariant found by ``validate_spec``."""

    code: str
    location: str
    message: str

    def __str__(self):
        return f"{self.code}({self.location}): {self.message}"


def validate_spec(spec: ChainSpec) -> list:
    """Collect every broken invariant; an empty list means the spec is usable.

    Never raises: callers that need hard failure wrap the result in
    ``SpecInvalid``.
    """
    out = []
    n = spec.n_bodies
    if n < 1:
        out.append(Violation("EmptyChain", "chain", "need at least one body"))
    if len(spec.joints) != max(n - 1, 0):
        out.append(Violation(
            "JointCountMismatch", "chain",
            f"{len(spec.joints)} joints for {n} bodies (need {n - 1})"))
    if not np.all(np.isfinite(spec.gravity)):
        out.append(Violation("NonFiniteGravity", "gravity",
                             "gravity vector must be finite"))
    for i, body in enumerate(spec.bodies):
        loc = f"body {i}"
        if not np.isfinite(body.mass) or body.mass <= 0.0:
            out.append(Violation("NonPositiveMass", loc,
                                 f"mass {body.mass!r} must be > 0"))
        ib = body.inertia_body
        if not np.all(np.isfinite(ib)):
            out.append(Violation("NonFiniteInertia", loc,
                                 "inertia entries must be finite"))
            continue
        if np.max(np.abs(ib - ib.T)) > 1e-12 * max(1.0, np.max(np.abs(ib))):
            out.append(Violation("InertiaNotSymmetric", loc,
                                 "inertia must be symmetric"))
            continue
        eig = np.linalg.eigvalsh(0.5 * (ib + ib.T))
        if eig[0] <= 0.0:
            out.append(Violation("InertiaNotPositiveDefinite", loc,
                                 f"principal moments {eig} must be > 0"))
            continue
        a, b, c = np.sort(eig)
        if c > a + b + 1e-12 * c:
            out.append(Violation(
                "TriangleInequalityViolated", loc,
                f"principal moments {eig}: largest exceeds sum of others"))
    for j, joint in enumerate(spec.joints):
        loc = f"joint {j}"
        if not (np.all(np.isfinite(joint.attach_parent))
                and np.all(np.isfinite(joint.attach_child))):
            out.append(Violation("NonFiniteAttachment", loc,
                                 "attachment vectors must be finite"))
        if np.any(joint.stiffness < 0.0) or not np.all(
                np.isfinite(joint.stiffness)):
            out.append(Violation("NegativeStiffness", loc,
                                 f"stiffness {joint.stiffness} must be >= 0"))
    return out


def require_valid(spec: ChainSpec) -> None:
    """Raise ``SpecInvalid`` when ``validate_spec`` finds anything."""
    violations = validate_spec(spec)
    if violations:
        raise SpecInvalid(violations)


@dataclass
class ChainState:
    """Dynamic state snapshot: one row per body, inertial components.

    ``quaternions`` rows are [q0, q1, q2, q3] body-from-inertial attitudes,
    ``ang_vel`` rows are inertial components of each body's angular velocity.
    """

    positions: np.ndarray   # (N, 3) [m]
    quaternions: np.ndarray  # (N, 4)
    lin_vel: np.ndarray     # (N, 3) [m/s]
    ang_vel: np.ndarray     # (N, 3) [rad/s]
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.quaternions = np.asarray(self.quaternions, dtype=float)
        self.lin_vel = np.asarray(self.lin_vel, dtype=float)
        self.ang_vel = np.asarray(self.ang_vel, dtype=float)

    @property
    def n_bodies(self) -> int:
        return self.positions.shape[0]

    @property
    def nu(self) -> np.ndarray:
        """Generalized twist: stacked linear then angular velocities (6N,)."""
        return np.concatenate([self.lin_vel.ravel(), self.ang_vel.ravel()])

    def copy(self) -> "ChainState":
        return ChainState(self.positions.copy(), self.quaternions.copy(),
                          self.lin_vel.copy(), self.ang_vel.copy(), self.time)


def attachment_points_inertial(spec: ChainSpec, state: ChainState,
                               rotations: np.ndarray | None = None):
    """COM-to-joint vectors rotated into inertial components.

    Returns ``(p_parent, p_child)`` each of shape (N-1, 3); the inertial
    joint positions are ``positions[:-1] + p_parent`` from the parent side
    and ``positions[1:] + p_child`` from the child side.
    """
    if rotations is None:
        rotations = geom.rotations_from_quats(state.quaternions)
    # body -> inertial is the transpose of the stored inertial -> body DCM
    p_parent = np.einsum("nji,nj->ni", rotations[:-1], spec.attach_parent)
    p_child = np.einsum("nji,nj->ni", rotations[1:], spec.attach_child)
    return p_parent, p_child


def constraint_residuals(spec: ChainSpec, state: ChainState):
    """Per-joint closure errors.

    ``position_gap[j]`` is the inertial mismatch between the joint point
    computed from the parent and from the child side.  ``velocity_gap[j]``
    is the joint-velocity constraint residual
    ``v_child - v_parent + p_parent x w_parent - p_child x w_child``
    (zero when both bodies agree on the joint point velocity).
    """
    if spec.n_bodies < 2:
        return np.zeros((0, 3)), np.zeros((0, 3))
    p_par, p_chi = attachment_points_inertial(spec, state)
    position_gap = (state.positions[:-1] + p_par) - (state.positions[1:] + p_chi)
    velocity_gap = (state.lin_vel[1:] - state.lin_vel[:-1]
                    + np.cross(p_par, state.ang_vel[:-1])
                    - np.cross(p_chi, state.ang_vel[1:]))
    return position_gap, velocity_gap


def assemble_consistent_state(spec: ChainSpec,
                              base_position=(0.0, 0.0, 0.0),
                              base_euler=(0.0, 0.0, 0.0),
                              joint_euler=(),
                              base_lin_vel=(0.0, 0.0, 0.0),
                              base_ang_vel=(0.0, 0.0, 0.0),
                              joint_rates=(),
                              time: float = 0.0) -> ChainState:
    """Forward-propagate a pose/twist description into a consistent state.

    ``joint_euler[j]`` is the (roll, pitch, yaw) triple of the relative
    rotation across joint j (the same angles the joint spring acts on) and
    ``joint_rates[j]`` is the relative angular velocity of body j+1 with
    respect to body j, inertial components.  Positions and velocities are
    propagated so every joint closes exactly and the velocity constraint
    holds to machine precision.
    """
    require_valid(spec)
    n = spec.n_bodies
    joint_euler = list(joint_euler)
    joint_rates = list(joint_rates)
    if len(joint_euler) not in (0, n - 1):
        raise ValueError(f"need {n - 1} joint_euler entries, got {len(joint_euler)}")
    if len(joint_rates) not in (0, n - 1):
        raise ValueError(f"need {n - 1} joint_rates entries, got {len(joint_rates)}")
    if not joint_euler:
        joint_euler = [(0.0, 0.0, 0.0)] * (n - 1)
    if not joint_rates:
        joint_rates = [(0.0, 0.0, 0.0)] * (n - 1)

    positions = np.zeros((n, 3))
    quats = np.zeros((n, 4))
    lin_vel = np.zeros((n, 3))
    ang_vel = np.zeros((n, 3))
    positions[0] = np.asarray(base_position, dtype=float)
    quats[0] = geom.quat_from_euler(base_euler)
    lin_vel[0] = np.asarray(base_lin_vel, dtype=float)
    ang_vel[0] = np.asarray(base_ang_vel, dtype=float)

    for j in range(n - 1):
        # relative DCM parent-from-child is R1 R2 R3 of the joint angles
        q_rel = geom.quat_from_euler(joint_euler[j])
        quats[j + 1] = geom.quat_normalize(
            geom.quat_multiply(quats[j], geom.quat_conjugate(q_rel)))
        r_par = geom.rotation_from_quat(quats[j]).T
        r_chi = geom.rotation_from_quat(quats[j + 1]).T
        p_par = r_par @ spec.attach_parent[j]
        p_chi = r_chi @ spec.attach_child[j]
        positions[j + 1] = positions[j] + p_par - p_chi
        ang_vel[j + 1] = ang_vel[j] + np.asarray(joint_rates[j], dtype=float)
        lin_vel[j + 1] = (lin_vel[j] + np.cross(ang_vel[j], p_par)
                          - np.cross(ang_vel[j + 1], p_chi))
    return ChainState(positions, quats, lin_vel, ang_vel, time)
