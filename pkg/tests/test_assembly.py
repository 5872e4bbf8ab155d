"""Dynamics assembly: block contents, saddle-point solve, skew identities."""
import numpy as np
import pytest

from chaindyn import geom
from chaindyn.assembly import (AssembledSystem, assemble, inertia_to_inertial,
                               joint_moments, kkt_inverse_blocks,
                               mass_derivative_minus_2c, solve_augmented)
from chaindyn.errors import NonSPDMass, RankDeficientConstraints
from chaindyn.model import (BodySpec, ChainSpec, ChainState, JointSpec,
                            assemble_consistent_state)

RNG = np.random.default_rng(2468)


def make_chain(n=3, gravity=(0, 0, -9.81), stiffness=(0, 0, 0)):
    bodies = [BodySpec(1.0 + 0.3 * i, np.diag([0.01, 0.02, 0.025]))
              for i in range(n)]
    joints = [JointSpec([0.25, 0, 0], [-0.25, 0, 0], stiffness)
              for _ in range(n - 1)]
    return ChainSpec(bodies, joints, gravity)


def random_state(spec, rng=RNG, rates=1.0):
    n = spec.n_bodies
    return assemble_consistent_state(
        spec,
        base_position=rng.normal(size=3),
        base_euler=rng.uniform(-1.0, 1.0, size=3),
        joint_euler=rng.uniform(-0.8, 0.8, size=(n - 1, 3)),
        base_lin_vel=rates * rng.normal(size=3),
        base_ang_vel=rates * rng.normal(size=3),
        joint_rates=rates * rng.normal(size=(n - 1, 3)))


# ---------------------------------------------------------------- inertia ---

def test_inertia_to_inertial_identity_attitude():
    ib = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(inertia_to_inertial(ib, [1, 0, 0, 0]), ib)


def test_inertia_to_inertial_preserves_eigenvalues():
    for _ in range(20):
        q = RNG.normal(size=4)
        q /= np.linalg.norm(q)
        ib = np.diag(RNG.uniform(0.5, 2.0, size=3))
        out = inertia_to_inertial(ib, q)
        assert np.allclose(np.sort(np.linalg.eigvalsh(out)),
                           np.sort(np.diag(ib)), atol=1e-12)


def test_inertia_to_inertial_quarter_yaw_swaps_xy():
    q = geom.quat_from_euler((0, 0, np.pi / 2))
    out = inertia_to_inertial(np.diag([1.0, 2.0, 3.0]), q)
    assert np.allclose(out, np.diag([2.0, 1.0, 3.0]), atol=1e-14)


# ----------------------------------------------------------- joint moments ---

def test_joint_moments_aligned_is_zero():
    spec = make_chain(3, stiffness=(2.0, 1.5, 1.0))
    st = assemble_consistent_state(spec, base_euler=(0.2, -0.3, 0.1))
    for jm in joint_moments(spec, st):
        assert np.allclose(jm.moment, 0.0, atol=1e-14)
        assert np.allclose(jm.relative_euler, (0, 0, 0), atol=1e-12)


def test_joint_moments_pure_relative_roll():
    k = 2.0
    spec = make_chain(2, stiffness=(k, 0, 0))
    phi = 0.4
    st = assemble_consistent_state(spec, base_euler=(0.3, 0.2, -0.5),
                                   joint_euler=[(phi, 0, 0)])
    (jm,) = joint_moments(spec, st)
    assert np.allclose(jm.relative_euler, (phi, 0, 0), atol=1e-12)
    b1 = geom.rotation_from_quat(st.quaternions[0])[0]
    assert np.allclose(jm.moment, k * phi * b1, atol=1e-12)
    assert np.isclose(np.linalg.norm(jm.moment), k * abs(phi))


def test_joint_moment_axes_unit_norm():
    spec = make_chain(4, stiffness=(1.0, 1.0, 1.0))
    st = random_state(spec)
    for jm in joint_moments(spec, st):
        assert np.allclose(np.linalg.norm(jm.axes, axis=1), 1.0, atol=1e-12)


def test_joint_moments_small_angle_linearization():
    """For isotropic stiffness k the moment approaches k times the relative
    rotation vector (inertial components) with an O(angle^2) error.

    Oracle: build the joint from a known small rotation vector r; the
    parent-from-child frame matrix is then I - skew(r) + O(r^2), so the
    moment must equal k * R_parent^T r + O(r^2).
    """
    k = 3.0
    spec = make_chain(2, stiffness=(k, k, k))
    rng = np.random.default_rng(17)
    for scale in (1e-3, 1e-2):
        for _ in range(10):
            r = scale * rng.normal(size=3)
            st = assemble_consistent_state(
                spec, base_euler=rng.uniform(-1, 1, size=3),
                joint_euler=[tuple(r)])
            (jm,) = joint_moments(spec, st)
            r_par = geom.rotation_from_quat(st.quaternions[0]).T
            expected = k * (r_par @ r)
            err = np.linalg.norm(jm.moment - expected)
            assert err < 5.0 * k * np.linalg.norm(r) ** 2


# ----------------------------------------------------------------- assemble ---

def test_assemble_single_body_reduction():
    spec = ChainSpec([BodySpec(2.0, np.diag([0.1, 0.2, 0.3]))], [],
                     (0, 0, -9.81))
    st = assemble_consistent_state(spec, base_euler=(0.3, 0.1, -0.2),
                                   base_ang_vel=(0.5, -0.2, 0.3))
    f = np.array([[1.0, -2.0, 0.5]])
    m = np.array([[0.2, 0.1, -0.3]])
    sys = assemble(spec, st, f_ext=f, m_ext=m)
    assert sys.jac.shape == (0, 6)
    i_inertial = inertia_to_inertial(spec.bodies[0].inertia_body,
                                     st.quaternions[0])
    assert np.allclose(sys.mass_gen[:3, :3], 2.0 * np.eye(3))
    assert np.allclose(sys.mass_gen[3:, 3:], i_inertial)
    w = st.ang_vel[0]
    assert np.allclose(sys.force_gen[:3], f[0] + 2.0 * spec.gravity)
    assert np.allclose(sys.force_gen[3:], m[0] - np.cross(w, i_inertial @ w))


def test_force_and_moment_distribution_match_jacobian():
    spec = make_chain(5, stiffness=(1.0, 0.5, 0.2))
    st = random_state(spec)
    sys = assemble(spec, st)
    n = spec.n_bodies
    assert np.array_equal(sys.force_dist, -sys.jac[:, :3 * n].T)
    assert np.allclose(sys.moment_dist, -sys.jac[:, 3 * n:].T, atol=1e-15)


def test_coriolis_zero_outside_angular_quadrant():
    spec = make_chain(4)
    st = random_state(spec)
    sys = assemble(spec, st)
    n = spec.n_bodies
    assert np.array_equal(sys.coriolis[:3 * n, :], 0 * sys.coriolis[:3 * n, :])
    assert np.array_equal(sys.coriolis[:, :3 * n], 0 * sys.coriolis[:, :3 * n])
    # and C(nu) @ nu reproduces the gyroscopic torques
    assert np.allclose((sys.coriolis @ sys.nu)[3 * n:], sys.gyro_force)


def test_mass_matrix_symmetric_positive_definite():
    spec = make_chain(4)
    st = random_state(spec)
    sys = assemble(spec, st)
    assert np.allclose(sys.mass_gen, sys.mass_gen.T, atol=1e-15)
    assert np.linalg.eigvalsh(sys.mass_gen)[0] > 0


def _advance_attitudes(state, h):
    """Exact attitude advance under the state's frozen inertial rates."""
    quats = []
    for i in range(state.n_bodies):
        w = state.ang_vel[i]
        ang = np.linalg.norm(w) * h
        if ang == 0.0:
            quats.append(state.quaternions[i])
            continue
        axis = w / np.linalg.norm(w)
        dq = np.concatenate([[np.cos(ang / 2)], np.sin(ang / 2) * axis])
        quats.append(geom.quat_multiply(dq, state.quaternions[i]))
    return ChainState(state.positions, np.array(quats), state.lin_vel,
                      state.ang_vel, state.time + h)


def test_gamma_matches_jacobian_rate_oracle():
    """gamma == -dJ/dt @ nu, the velocity-product part of the acceleration
    constraint.

    Oracle: rotate all attitudes exactly under the frozen angular rates
    over +/- h (positions do not enter J), difference the Jacobian
    centrally, and apply it to the frozen twist.  Central differencing is
    O(h^2), checked at two step sizes.
    """
    spec = make_chain(4)
    st = random_state(spec, rates=1.5)
    sys = assemble(spec, st)
    nu = st.nu
    errs = []
    for h in (1e-4, 5e-5):
        j_plus = assemble(spec, _advance_attitudes(st, h)).jac
        j_minus = assemble(spec, _advance_attitudes(st, -h)).jac
        gamma_fd = -((j_plus - j_minus) / (2.0 * h)) @ nu
        errs.append(np.max(np.abs(gamma_fd - sys.gamma)))
    assert errs[0] < 1e-6
    assert 2.5 < errs[0] / max(errs[1], 1e-300) < 6.0


# -------------------------------------------------------------------- solve ---

def test_solve_single_free_body():
    spec = ChainSpec([BodySpec(2.0, np.eye(3) * 0.1)], [], (0, 0, 0))
    st = assemble_consistent_state(spec)
    f = np.array([[3.0, -1.0, 0.5]])
    res = solve_augmented(assemble(spec, st, f_ext=f))
    assert res.joint_forces.shape == (0,)
    assert np.allclose(res.accel_gen[:3], f[0] / 2.0)
    assert np.allclose(res.accel_gen[3:], 0.0)


def test_solve_two_body_composite_newton_law():
    """Total force balance: sum(m_i a_i) == sum(m_i g) under pure gravity."""
    spec = make_chain(2, gravity=(0, 0, -9.81))
    st = assemble_consistent_state(spec, joint_euler=[(0.4, 0.3, -0.2)])
    sys = assemble(spec, st)
    res = solve_augmented(sys)
    accels = res.accel_gen[:6].reshape(2, 3)
    total = spec.masses[:, None] * accels
    expected = spec.masses.sum() * spec.gravity
    assert np.allclose(total.sum(axis=0), expected, atol=1e-10)
    assert np.allclose(sys.jac @ res.accel_gen, sys.gamma, atol=1e-12)


def test_solve_residual_and_schur_vs_dense():
    import chaindyn.assembly as asm

    spec = make_chain(3, stiffness=(1.0, 1.0, 1.0))
    for _ in range(10):
        st = random_state(spec)
        sys = assemble(spec, st, f_ext=RNG.normal(size=(3, 3)),
                       m_ext=RNG.normal(size=(3, 3)))
        res = solve_augmented(sys)
        # saddle-point residual, relative
        r1 = sys.mass_gen @ res.accel_gen - sys.jac.T @ res.joint_forces \
            - sys.force_gen
        r2 = sys.jac @ res.accel_gen - sys.gamma
        scale = max(1.0, np.max(np.abs(sys.force_gen)))
        assert np.max(np.abs(r1)) / scale < 1e-10
        assert np.max(np.abs(r2)) < 1e-10
        # dense fallback path must agree with the Schur path
        old = asm.CONDITION_FALLBACK
        asm.CONDITION_FALLBACK = 0.0
        try:
            dense = solve_augmented(sys)
        finally:
            asm.CONDITION_FALLBACK = old
        assert np.allclose(res.accel_gen, dense.accel_gen, atol=1e-11)
        assert np.allclose(res.joint_forces, dense.joint_forces, atol=1e-11)


def test_solve_rejects_nonspd_mass():
    spec = make_chain(2)
    st = assemble_consistent_state(spec)
    sys = assemble(spec, st)
    bad = AssembledSystem(**{**sys.__dict__,
                             "masses": np.array([-1.0, 1.0])})
    with pytest.raises(NonSPDMass):
        solve_augmented(bad)


def test_solve_rejects_rank_deficient_constraints():
    spec = make_chain(2)
    st = assemble_consistent_state(spec)
    sys = assemble(spec, st)
    # wipe the Jacobian rows: constraints become degenerate
    bad = AssembledSystem(**{**sys.__dict__, "jac": np.zeros_like(sys.jac)})
    with pytest.raises(RankDeficientConstraints):
        solve_augmented(bad)


def test_momentum_rates_vanish_without_external_input():
    """Free chain (no gravity, no stiffness, no input): the solved
    accelerations must keep total linear and angular momentum constant.

    d/dt L = sum m_i a_i; d/dt H = sum (r_i x m_i a_i + v_i x m_i v_i
    + dI_i/dt w_i + I_i dw_i/dt) with dI/dt = Omega I - I Omega.
    """
    spec = make_chain(5, gravity=(0, 0, 0))
    for _ in range(5):
        st = random_state(spec, rates=1.2)
        sys = assemble(spec, st)
        res = solve_augmented(sys)
        n = spec.n_bodies
        a_lin = res.accel_gen[:3 * n].reshape(n, 3)
        a_ang = res.accel_gen[3 * n:].reshape(n, 3)
        d_lin = (spec.masses[:, None] * a_lin).sum(axis=0)
        w = st.ang_vel
        i_dot_w = np.cross(w, np.einsum("nij,nj->ni", sys.inertia_inertial, w))
        d_ang = (np.cross(st.positions, spec.masses[:, None] * a_lin)
                 + np.cross(st.lin_vel, spec.masses[:, None] * st.lin_vel)
                 + i_dot_w
                 + np.einsum("nij,nj->ni", sys.inertia_inertial, a_ang)
                 ).sum(axis=0)
        assert np.max(np.abs(d_lin)) < 1e-10
        assert np.max(np.abs(d_ang)) < 1e-10


# -------------------------------------------------------------- KKT inverse ---

def test_kkt_inverse_single_body():
    spec = ChainSpec([BodySpec(2.0, np.diag([0.1, 0.2, 0.3]))], [], (0, 0, 0))
    st = assemble_consistent_state(spec)
    sys = assemble(spec, st)
    blocks = kkt_inverse_blocks(sys)
    assert np.allclose(blocks.top_left, np.linalg.inv(sys.mass_gen))
    assert blocks.bottom_right.shape == (0, 0)


def test_kkt_inverse_multiplies_back_to_identity():
    spec = make_chain(3)
    for _ in range(5):
        st = random_state(spec)
        sys = assemble(spec, st)
        blocks = kkt_inverse_blocks(sys)
        m = sys.jac.shape[0]
        kkt = np.block([[sys.mass_gen, sys.jac.T],
                        [sys.jac, np.zeros((m, m))]])
        inv = np.block([[blocks.top_left, blocks.top_right],
                        [blocks.bottom_left, blocks.bottom_right]])
        assert np.max(np.abs(kkt @ inv - np.eye(kkt.shape[0]))) < 1e-10


def test_schur_complement_is_spd():
    spec = make_chain(4)
    st = random_state(spec)
    sys = assemble(spec, st)
    minv = np.linalg.inv(sys.mass_gen)
    schur = sys.jac @ minv @ sys.jac.T
    eigs = np.linalg.eigvalsh(0.5 * (schur + schur.T))
    assert eigs[0] > 0
    assert np.allclose(schur, schur.T, atol=1e-12)


# ----------------------------------------------------- skew-symmetry of N ---

def test_mass_derivative_minus_2c_zero_at_rest():
    spec = make_chain(3)
    st = assemble_consistent_state(spec)
    assert np.array_equal(mass_derivative_minus_2c(spec, st),
                          np.zeros((18, 18)))


def test_mass_derivative_minus_2c_exactly_skew():
    spec = make_chain(4)
    for _ in range(20):
        st = random_state(spec)
        nmat = mass_derivative_minus_2c(spec, st)
        assert np.max(np.abs(nmat + nmat.T)) < 1e-12
        s = RNG.normal(size=nmat.shape[0])
        assert abs(s @ nmat @ s) < 1e-12 * (s @ s) * max(
            1.0, np.max(np.abs(nmat)))


def test_mass_derivative_finite_difference_oracle():
    """(M(t+h) - M(t-h)) / 2h == N + 2C with O(h^2) error.

    The attitude advance uses exact single-step quaternion integration of
    the frozen angular velocity, which is enough for the O(h^2) check.
    """
    spec = make_chain(3)
    st = random_state(spec, rates=1.5)

    def mass_at_offset(h):
        return assemble(spec, _advance_attitudes(st, h)).mass_gen

    sys = assemble(spec, st)
    nmat = mass_derivative_minus_2c(spec, st)
    analytic = nmat + 2.0 * sys.coriolis
    errs = []
    for h in (1e-4, 5e-5):
        fd = (mass_at_offset(h) - mass_at_offset(-h)) / (2.0 * h)
        errs.append(np.max(np.abs(fd - analytic)))
    assert errs[0] < 1e-6
    ratio = errs[0] / max(errs[1], 1e-300)
    assert 2.5 < ratio < 6.0  # O(h^2): halving h cuts the error ~4x
