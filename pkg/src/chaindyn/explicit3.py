"""Fully written-out three-body chain, used as an independent cross-check.

Every matrix of the 18+6 augmented system is spelled out block by block for
exactly N = 3, with scipy handling quaternions, rotations and Euler angles.
Nothing here is shared with the general assembler in :mod:`.assembly`; the
whole point is a second, independently coded route to the same numbers.
The solver here is a dense factorization of the full 24 x 24 saddle-point
matrix, cross-checking the general Schur-complement path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .model import ChainSpec, ChainState


def _dcm_inertial_to_body(quat_wxyz: np.ndarray) -> np.ndarray:
    """scipy uses [x, y, z, w] and active (body-to-inertial) matrices."""
    q = np.asarray(quat_wxyz, dtype=float)
    r = Rotation.from_quat([q[1], q[2], q[3], q[0]])
    return r.as_matrix().T


def _skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _relative_euler_321(t_parent: np.ndarray, t_child: np.ndarray):
    """(roll, pitch, yaw) of the parent-from-child frame transformation.

    The frame matrix R1(roll) R2(pitch) R3(yaw) is the transpose of the
    active intrinsic z-y-x rotation, which scipy extracts directly.
    """
    t_rel = t_parent @ t_child.T
    yaw, pitch, roll = Rotation.from_matrix(t_rel.T).as_euler("ZYX")
    return roll, pitch, yaw


@dataclass
class ExplicitBlocks:
    """All blocks of the written-out three-body system."""

    mass: np.ndarray        # (18, 18)
    jac_v: np.ndarray       # (6, 9)
    jac_w: np.ndarray       # (6, 9)
    force: np.ndarray       # (18,)
    gamma: np.ndarray       # (6,)
    cf: np.ndarray          # (9, 6)
    cm: np.ndarray          # (9, 6)

    @property
    def jac(self) -> np.ndarray:
        return np.hstack([self.jac_v, self.jac_w])


def assemble_three_body(spec: ChainSpec, state: ChainState,
                        forces_inertial, moments_body) -> ExplicitBlocks:
    """Evaluate the explicit three-body blocks.

    ``forces_inertial``: (3, 3) external force per body, inertial
    components.  ``moments_body``: (3, 3) external moment per body given in
    that body's own frame (rotated to inertial inside, which is where the
    general path and this one must agree).
    """
    if spec.n_bodies != 3:
        raise ValueError("explicit formulation is exactly three bodies")
    m1, m2, m3 = spec.masses
    g = spec.gravity
    t1 = _dcm_inertial_to_body(state.quaternions[0])
    t2 = _dcm_inertial_to_body(state.quaternions[1])
    t3 = _dcm_inertial_to_body(state.quaternions[2])

    i1 = t1.T @ spec.inertias_body[0] @ t1
    i2 = t2.T @ spec.inertias_body[1] @ t2
    i3 = t3.T @ spec.inertias_body[2] @ t3

    # COM-from-joint position tensors, inertial components
    s_b1j1 = -(t1.T @ spec.attach_parent[0])
    s_b2j1 = -(t2.T @ spec.attach_child[0])
    s_b2j2 = -(t2.T @ spec.attach_parent[1])
    s_b3j2 = -(t3.T @ spec.attach_child[1])

    mass = np.zeros((18, 18))
    mass[0:3, 0:3] = m1 * np.eye(3)
    mass[3:6, 3:6] = m2 * np.eye(3)
    mass[6:9, 6:9] = m3 * np.eye(3)
    mass[9:12, 9:12] = i1
    mass[12:15, 12:15] = i2
    mass[15:18, 15:18] = i3

    eye = np.eye(3)
    jac_v = np.block([[-eye, eye, np.zeros((3, 3))],
                      [np.zeros((3, 3)), -eye, eye]])
    jac_w = np.block([[-_skew(s_b1j1), _skew(s_b2j1), np.zeros((3, 3))],
                      [np.zeros((3, 3)), -_skew(s_b2j2), _skew(s_b3j2)]])

    cf = np.block([[eye, np.zeros((3, 3))],
                   [-eye, eye],
                   [np.zeros((3, 3)), -eye]])
    cm = np.block([[-_skew(s_b1j1), np.zeros((3, 3))],
                   [_skew(s_b2j1), -_skew(s_b2j2)],
                   [np.zeros((3, 3)), _skew(s_b3j2)]])

    # flexible-joint constitutive moments
    roll1, pitch1, yaw1 = _relative_euler_321(t1, t2)
    roll2, pitch2, yaw2 = _relative_euler_321(t2, t3)
    rz1 = np.array([[np.cos(yaw1), np.sin(yaw1), 0.0],
                    [-np.sin(yaw1), np.cos(yaw1), 0.0],
                    [0.0, 0.0, 1.0]])
    rz2 = np.array([[np.cos(yaw2), np.sin(yaw2), 0.0],
                    [-np.sin(yaw2), np.cos(yaw2), 0.0],
                    [0.0, 0.0, 1.0]])
    x12 = (rz1 @ t2)[1]
    x22 = (rz2 @ t3)[1]
    k1, k2 = spec.stiffness
    m_j1 = k1[0] * roll1 * t1[0] + k1[1] * pitch1 * x12 + k1[2] * yaw1 * t2[2]
    m_j2 = k2[0] * roll2 * t2[0] + k2[1] * pitch2 * x22 + k2[2] * yaw2 * t3[2]

    w1, w2, w3 = state.ang_vel
    f_b = np.asarray(forces_inertial, dtype=float)
    m_b = np.asarray(moments_body, dtype=float)
    force = np.concatenate([
        f_b[0] + m1 * g,
        f_b[1] + m2 * g,
        f_b[2] + m3 * g,
        t1.T @ m_b[0] + m_j1 - _skew(w1) @ i1 @ w1,
        t2.T @ m_b[1] - m_j1 + m_j2 - _skew(w2) @ i2 @ w2,
        t3.T @ m_b[2] - m_j2 - _skew(w3) @ i3 @ w3,
    ])

    gamma = np.concatenate([
        -_skew(w1) @ _skew(w1) @ s_b1j1 + _skew(w2) @ _skew(w2) @ s_b2j1,
        -_skew(w2) @ _skew(w2) @ s_b2j2 + _skew(w3) @ _skew(w3) @ s_b3j2,
    ])

    return ExplicitBlocks(mass=mass, jac_v=jac_v, jac_w=jac_w, force=force,
                          gamma=gamma, cf=cf, cm=cm)


def solve_three_body(blocks: ExplicitBlocks):
    """Dense solve of the full 24 x 24 saddle-point system.

    Returns (accel (18,), joint_forces (6,)).
    """
    jac = blocks.jac
    kkt = np.zeros((24, 24))
    kkt[:18, :18] = blocks.mass
    kkt[:18, 18:] = jac.T
    kkt[18:, :18] = jac
    rhs = np.concatenate([blocks.force, blocks.gamma])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:18], -sol[18:]


def random_three_body_case(rng: np.random.Generator):
    """One random well-posed three-body spec, state and external input.

    Inertias are built from principal moments (a+b, b+c, c+a) with a, b, c
    positive, which always satisfy the rigid-body triangle inequalities,
    then rotated by a random attitude.
    """
    from .model import BodySpec, JointSpec  # local import avoids a cycle

    bodies = []
    for _ in range(3):
        a, b, c = rng.uniform(0.05, 0.5, size=3)
        moments = np.diag([a + b, b + c, c + a])
        r = Rotation.random(random_state=int(rng.integers(2**31)))
        m = r.as_matrix()
        bodies.append(BodySpec(rng.uniform(0.5, 3.0), m @ moments @ m.T))
    joints = [JointSpec(rng.uniform(-0.4, 0.4, 3), rng.uniform(-0.4, 0.4, 3),
                        rng.uniform(0.0, 2.0, 3)) for _ in range(2)]
    spec = ChainSpec(bodies, joints, rng.uniform(-3.0, 3.0, 3))
    quats = rng.normal(size=(3, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    state = ChainState(positions=rng.normal(size=(3, 3)), quaternions=quats,
                       lin_vel=rng.normal(size=(3, 3)),
                       ang_vel=rng.normal(size=(3, 3)))
    forces = rng.normal(size=(3, 3))
    moments_body = rng.normal(size=(3, 3))
    return spec, state, forces, moments_body


@dataclass
class OracleOutcome:
    """Result of a randomized general-vs-explicit comparison run."""

    trials: int
    max_deviation: dict          # block name -> worst entrywise deviation
    failed_block: str | None     # first block over tolerance, if any
    failed_trial: int | None
    failed_index: tuple | None

    @property
    def passed(self) -> bool:
        return self.failed_block is None


def run_oracle_trials(seed: int, trials: int, block_tol: float = 1e-12,
                      solve_tol: float = 1e-11,
                      assemble_fn=None, solve_fn=None) -> OracleOutcome:
    """Compare the general assembler against this module on random cases.

    Every matrix block must agree entrywise within ``block_tol`` and the
    two solver routes within ``solve_tol``.  ``assemble_fn`` / ``solve_fn``
    default to the production implementations and exist so tests can
    inject a deliberately broken assembler.
    """
    from . import assembly, geom

    if assemble_fn is None:
        assemble_fn = assembly.assemble
    if solve_fn is None:
        solve_fn = assembly.solve_augmented
    rng = np.random.default_rng(seed)
    worst: dict = {}
    failed = (None, None, None)
    for trial in range(trials):
        spec, state, forces, moments_body = random_three_body_case(rng)
        rot = geom.rotations_from_quats(state.quaternions)
        moments_inertial = np.einsum("nji,nj->ni", rot, moments_body)
        sys = assemble_fn(spec, state, f_ext=forces, m_ext=moments_inertial)
        blk = assemble_three_body(spec, state, forces, moments_body)
        res = solve_fn(sys)
        accel, f_joint = solve_three_body(blk)
        pairs = [
            ("M", sys.mass_gen, blk.mass, block_tol),
            ("J_v", sys.jac[:, :9], blk.jac_v, block_tol),
            ("J_omega", sys.jac[:, 9:], blk.jac_w, block_tol),
            ("C_F", sys.force_dist, blk.cf, block_tol),
            ("C_M", sys.moment_dist, blk.cm, block_tol),
            ("F", sys.force_gen, blk.force, block_tol),
            ("gamma", sys.gamma, blk.gamma, block_tol),
            ("accel", res.accel_gen, accel, solve_tol),
            ("F_J", res.joint_forces, f_joint, solve_tol),
        ]
        for name, got, want, tol in pairs:
            dev = np.abs(np.asarray(got) - np.asarray(want))
            peak = float(dev.max()) if dev.size else 0.0
            worst[name] = max(worst.get(name, 0.0), peak)
            if peak > tol and failed[0] is None:
                idx = np.unravel_index(int(dev.argmax()), dev.shape)
                failed = (name, trial, idx)
    return OracleOutcome(trials=trials, max_deviation=worst,
                         failed_block=failed[0], failed_trial=failed[1],
                         failed_index=failed[2])
