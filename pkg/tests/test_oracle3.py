"""General assembler vs the independently coded explicit three-body route."""
import numpy as np

from chaindyn import explicit3, geom
from chaindyn.assembly import assemble, solve_augmented


def test_random_equivalence_blocks_and_solve():
    """200 random cases: every block entrywise < 1e-12, solves < 1e-11.

    (The acceptance suite reruns this with 1000 trials.)
    """
    outcome = explicit3.run_oracle_trials(seed=123, trials=200)
    assert outcome.passed, (
        f"block {outcome.failed_block} deviates at trial "
        f"{outcome.failed_trial}, index {outcome.failed_index}: "
        f"{outcome.max_deviation}")
    assert outcome.max_deviation["M"] < 1e-12
    assert outcome.max_deviation["accel"] < 1e-11


def test_zero_trials_reports_pass():
    outcome = explicit3.run_oracle_trials(seed=1, trials=0)
    assert outcome.passed and outcome.trials == 0
    assert outcome.max_deviation == {}


def test_injected_fault_is_detected_and_named():
    """A deliberately perturbed J_omega block must be caught by name."""

    def broken_assemble(spec, state, f_ext=None, m_ext=None):
        sys = assemble(spec, state, f_ext=f_ext, m_ext=m_ext)
        n = spec.n_bodies
        sys.jac[0, 3 * n] += 1e-9
        return sys

    outcome = explicit3.run_oracle_trials(seed=5, trials=3,
                                          assemble_fn=broken_assemble)
    assert not outcome.passed
    assert outcome.failed_block == "J_omega"
    assert outcome.failed_trial == 0


def test_explicit_solver_satisfies_saddle_point_equations():
    rng = np.random.default_rng(77)
    for _ in range(10):
        spec, state, forces, moments_body = \
            explicit3.random_three_body_case(rng)
        blk = explicit3.assemble_three_body(spec, state, forces, moments_body)
        accel, f_joint = explicit3.solve_three_body(blk)
        jac = blk.jac
        assert np.max(np.abs(blk.mass @ accel - jac.T @ f_joint
                             - blk.force)) < 1e-9
        assert np.max(np.abs(jac @ accel - blk.gamma)) < 1e-10


def test_body_frame_moment_resolution_matches():
    """Both routes resolve body-frame external moments identically."""
    rng = np.random.default_rng(31)
    spec, state, forces, moments_body = explicit3.random_three_body_case(rng)
    rot = geom.rotations_from_quats(state.quaternions)
    m_inertial = np.einsum("nji,nj->ni", rot, moments_body)
    sys = assemble(spec, state, f_ext=forces, m_ext=m_inertial)
    blk = explicit3.assemble_three_body(spec, state, forces, moments_body)
    assert np.max(np.abs(sys.force_gen - blk.force)) < 1e-12
