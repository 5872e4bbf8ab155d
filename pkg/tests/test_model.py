"""Chain description validation and consistent-state construction."""
import numpy as np
import pytest

from chaindyn import geom
from chaindyn.errors import SpecInvalid
from chaindyn.model import (BodySpec, ChainSpec, JointSpec,
                            assemble_consistent_state, constraint_residuals,
                            validate_spec)


def make_chain(n=3, gravity=(0, 0, -9.81), stiffness=(0, 0, 0)):
    """Uniform rod chain along +x: joints halfway between adjacent COMs."""
    bodies = [BodySpec(1.0 + 0.2 * i, np.diag([0.004, 0.025, 0.025]))
              for i in range(n)]
    joints = [JointSpec([0.25, 0, 0], [-0.25, 0, 0], stiffness)
              for _ in range(n - 1)]
    return ChainSpec(bodies, joints, gravity)


def test_validate_single_body_ok():
    spec = ChainSpec([BodySpec(1.0, np.eye(3))], [], (0, 0, 0))
    assert validate_spec(spec) == []


def test_validate_negative_mass():
    spec = ChainSpec([BodySpec(-1.0, np.eye(3))], [], (0, 0, 0))
    codes = [v.code for v in validate_spec(spec)]
    assert codes == ["NonPositiveMass"]
    assert "body 0" in str(validate_spec(spec)[0])


def test_validate_triangle_inequality():
    # principal moments (1, 1, 3): 3 > 1 + 1 for any rigid mass distribution
    spec = ChainSpec([BodySpec(1.0, np.diag([1.0, 1.0, 3.0]))], [], (0, 0, 0))
    codes = [v.code for v in validate_spec(spec)]
    assert codes == ["TriangleInequalityViolated"]


def test_validate_rotated_triangle_violation_found_by_eigs():
    # same bad moments hidden by a similarity transform
    q = geom.quat_from_euler((0.4, 0.3, -0.8))
    t = geom.rotation_from_quat(q)
    bad = t.T @ np.diag([1.0, 1.0, 3.0]) @ t
    spec = ChainSpec([BodySpec(1.0, bad)], [], (0, 0, 0))
    assert [v.code for v in validate_spec(spec)] == ["TriangleInequalityViolated"]


def test_validate_asymmetric_inertia():
    ib = np.diag([1.0, 2.0, 2.5])
    ib[0, 1] = 0.3
    spec = ChainSpec([BodySpec(1.0, ib)], [], (0, 0, 0))
    assert [v.code for v in validate_spec(spec)] == ["InertiaNotSymmetric"]


def test_validate_joint_count_mismatch():
    spec = ChainSpec([BodySpec(1.0, np.eye(3))],
                     [JointSpec([0, 0, 0], [0, 0, 0])], (0, 0, 0))
    assert "JointCountMismatch" in [v.code for v in validate_spec(spec)]


def test_validate_negative_stiffness():
    spec = ChainSpec([BodySpec(1.0, np.eye(3)), BodySpec(1.0, np.eye(3))],
                     [JointSpec([0.1, 0, 0], [-0.1, 0, 0], (-1, 0, 0))],
                     (0, 0, 0))
    assert "NegativeStiffness" in [v.code for v in validate_spec(spec)]


def test_validate_is_pure():
    spec = make_chain(4)
    assert validate_spec(spec) == validate_spec(spec) == []


def test_consistent_state_zero_angles_collinear():
    spec = make_chain(4)
    st = assemble_consistent_state(spec)
    # bodies 0.5 m apart along +x, everything else zero
    assert np.allclose(st.positions,
                       [[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0], [1.5, 0, 0]])
    assert np.allclose(st.lin_vel, 0) and np.allclose(st.ang_vel, 0)
    pos_gap, vel_gap = constraint_residuals(spec, st)
    assert np.max(np.abs(pos_gap)) == 0.0
    assert np.max(np.abs(vel_gap)) == 0.0


def test_consistent_state_rejects_invalid_spec():
    bad = ChainSpec([BodySpec(-1.0, np.eye(3))], [], (0, 0, 0))
    with pytest.raises(SpecInvalid):
        assemble_consistent_state(bad)


def test_rigid_body_velocity_field_oracle():
    """Base twist with zero joint rates must reproduce a single rigid body.

    Independent oracle: v_i = v_base + w x (r_i - r_base) for every body.
    """
    spec = make_chain(5)
    w = np.array([0.3, -0.4, 0.25])
    v = np.array([0.1, 0.05, -0.2])
    st = assemble_consistent_state(
        spec, base_euler=(0.2, -0.1, 0.4),
        joint_euler=[(0.3, 0.1, -0.2)] * 4,
        base_lin_vel=v, base_ang_vel=w)
    assert np.allclose(st.ang_vel, w)
    expected = v + np.cross(w, st.positions - st.positions[0])
    assert np.allclose(st.lin_vel, expected, atol=1e-14)
    _, vel_gap = constraint_residuals(spec, st)
    assert np.max(np.abs(vel_gap)) < 1e-14


def test_random_angles_and_rates_residuals_vanish():
    rng = np.random.default_rng(42)
    spec = make_chain(6)
    for _ in range(20):
        st = assemble_consistent_state(
            spec,
            base_position=rng.normal(size=3),
            base_euler=rng.uniform(-1.2, 1.2, size=3),
            joint_euler=rng.uniform(-1.0, 1.0, size=(5, 3)),
            base_lin_vel=rng.normal(size=3),
            base_ang_vel=rng.normal(size=3),
            joint_rates=rng.normal(size=(5, 3)))
        pos_gap, vel_gap = constraint_residuals(spec, st)
        assert np.max(np.abs(pos_gap)) < 1e-12
        assert np.max(np.abs(vel_gap)) < 1e-12


def test_joint_euler_angles_recovered_from_relative_rotation():
    """The relative DCM across a joint reproduces the input joint angles."""
    spec = make_chain(3)
    angles = [(0.3, -0.2, 0.5), (-0.4, 0.25, -0.1)]
    st = assemble_consistent_state(spec, base_euler=(0.1, 0.2, 0.3),
                                   joint_euler=angles)
    rots = geom.rotations_from_quats(st.quaternions)
    for j, exp in enumerate(angles):
        t_rel = rots[j] @ rots[j + 1].T
        assert np.allclose(geom.euler_from_matrix(t_rel), exp, atol=1e-12)


def test_translated_body_shows_up_as_position_gap():
    spec = make_chain(3)
    st = assemble_consistent_state(spec)
    delta = 1e-3
    st.positions[1] += [0.0, 0.0, delta]
    pos_gap, _ = constraint_residuals(spec, st)
    assert np.isclose(np.linalg.norm(pos_gap[0]), delta)
    # joint 1 gap changes sign on the parent side
    assert np.isclose(np.linalg.norm(pos_gap[1]), delta)
