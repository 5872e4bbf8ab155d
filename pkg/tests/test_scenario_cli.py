"""Scenario ingestion, round-tripping, and the CLI commands."""
import re
from pathlib import Path

import numpy as np
import pytest

from chaindyn import cli, explicit3
from chaindyn import scenario as scn

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def load(name):
    return scn.load_scenario(SCENARIOS / name)


# ------------------------------------------------------------------ parsing ---

def test_parse_validate_scenario():
    s = load("validate_5body.scn")
    assert s.spec.n_bodies == 5
    assert s.compensate_gravity
    assert len(s.pulses) == 2
    assert s.pulses[0].kind == "moment" and s.pulses[0].body == 0
    assert s.integration.t_end == 10.0


def test_parse_reports_syntax_error_with_line():
    with pytest.raises(scn.ScenarioError, match="line"):
        scn.parse_scenario("[bodies\nmass = [1.0]")


def test_parse_rejects_negative_mass_with_code():
    text = (SCENARIOS / "spin_single.scn").read_text()
    bad = text.replace("mass = [2.0]", "mass = [-2.0]")
    with pytest.raises(scn.ScenarioError, match="NonPositiveMass"):
        scn.parse_scenario(bad)


def test_parse_rejects_compensation_in_closed_loop():
    text = (SCENARIOS / "track_velocity.scn").read_text()
    bad = text.replace("compensated = false", "compensated = true")
    with pytest.raises(scn.ScenarioError, match="compensated"):
        scn.parse_scenario(bad)


def test_round_trip_field_for_field():
    for name in ("validate_5body.scn", "conserve_5body.scn",
                 "track_endeffector.scn", "spin_single.scn",
                 "regulate_pose.scn"):
        s1 = load(name)
        text = scn.write_scenario(s1)
        s2 = scn.parse_scenario(text)
        assert scn.write_scenario(s2) == text
        assert s1.config_hash == s2.config_hash
        assert s1.mode == s2.mode
        assert np.array_equal(s1.base_position, s2.base_position)
        assert np.array_equal(s1.joint_euler, s2.joint_euler)
        for b1, b2 in zip(s1.spec.bodies, s2.spec.bodies):
            assert b1.mass == b2.mass
            assert np.array_equal(b1.inertia_body, b2.inertia_body)
        for j1, j2 in zip(s1.spec.joints, s2.spec.joints):
            assert np.array_equal(j1.attach_parent, j2.attach_parent)
            assert np.array_equal(j1.stiffness, j2.stiffness)
        assert len(s1.pulses) == len(s2.pulses)
        for p1, p2 in zip(s1.pulses, s2.pulses):
            assert (p1.body, p1.kind, p1.frame) == (p2.body, p2.kind, p2.frame)
            assert np.array_equal(p1.vector, p2.vector)
            assert (p1.t_start, p1.t_stop) == (p2.t_start, p2.t_stop)


def test_initial_state_builder_consistency():
    s = load("conserve_5body.scn")
    st = s.initial_state()
    from chaindyn.model import constraint_residuals
    gap, vgap = constraint_residuals(s.spec, st)
    assert np.max(np.abs(gap)) < 1e-12
    assert np.max(np.abs(vgap)) < 1e-12


# ---------------------------------------------------------------------- run ---

def test_cmd_run_validate_5body(tmp_path):
    rc = cli.main(["run", str(SCENARIOS / "validate_5body.scn"),
                   "--out", str(tmp_path), "--t-end", "3.0"])
    assert rc == 0
    report = (tmp_path / "validate_5body_report.txt").read_text()
    assert "PASS momentum_conservation" in report
    m = re.search(r"momentum_conservation: (\S+)", report)
    assert float(m.group(1)) < 1e-8
    trace = (tmp_path / "validate_5body_trace.csv").read_text().splitlines()
    assert trace[0].startswith("# config_hash=")
    assert trace[1].split(",")[0] == "time"


def test_cmd_run_parse_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    text = (SCENARIOS / "spin_single.scn").read_text()
    bad.write_text(text.replace("mass = [2.0]", "mass = [-2.0]"))
    rc = cli.main(["run", str(bad), "--out", str(tmp_path)])
    assert rc == 2
    assert "NonPositiveMass" in capsys.readouterr().err


def test_cmd_run_closed_loop_tracking(tmp_path):
    rc = cli.main(["run", str(SCENARIOS / "track_endeffector.scn"),
                   "--out", str(tmp_path), "--t-end", "4.0"])
    assert rc == 0
    report = (tmp_path / "track_endeffector_report.txt").read_text()
    assert "PASS final_tracking_pos" in report
    assert "PASS lyapunov_monotone" in report


# ------------------------------------------------------------------- oracle ---

def test_cmd_oracle_small(capsys):
    rc = cli.main(["oracle", "--seed", "11", "--trials", "25"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "all blocks and solves agree" in out


def test_cmd_oracle_zero_trials(capsys):
    rc = cli.main(["oracle", "--trials", "0"])
    assert rc == 0
    assert "no trials" in capsys.readouterr().out


def test_cmd_oracle_injected_fault(monkeypatch, capsys):
    real = explicit3.run_oracle_trials

    def with_fault(seed, trials, **kw):
        from chaindyn.assembly import assemble

        def broken(spec, state, f_ext=None, m_ext=None):
            sys = assemble(spec, state, f_ext=f_ext, m_ext=m_ext)
            sys.jac[0, 3 * spec.n_bodies] += 1e-9
            return sys

        kw["assemble_fn"] = broken
        return real(seed, trials, **kw)

    monkeypatch.setattr(explicit3, "run_oracle_trials", with_fault)
    rc = cli.main(["oracle", "--seed", "1", "--trials", "2"])
    assert rc == 1
    assert "J_omega" in capsys.readouterr().out


# -------------------------------------------------------------------- sweep ---

def test_cmd_sweep_empty_grid(capsys):
    rc = cli.main(["sweep", str(SCENARIOS / "spin_single.scn"),
                   "--param", "dt="])
    assert rc == 0
    assert "empty grid" in capsys.readouterr().out


def test_cmd_sweep_dt_convergence_order(tmp_path, capsys):
    rc = cli.main(["sweep", str(SCENARIOS / "spin_single.scn"),
                   "--param", "dt=0.004,0.002,0.001",
                   "--out", str(tmp_path), "--jobs", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    orders = [float(x) for x in
              re.findall(r"\t(\d+\.\d+)\s*$", out, flags=re.M)]
    assert orders and all(o >= 3.7 for o in orders)
    assert (tmp_path / "spin_single_sweep.csv").exists()


def test_cmd_sweep_kd_scale_convergence_time(tmp_path, capsys):
    rc = cli.main(["sweep", str(SCENARIOS / "track_velocity.scn"),
                   "--param", "kd_scale=1,10,100",
                   "--out", str(tmp_path), "--jobs", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    header, *rows = [ln.split("\t") for ln in out.strip().splitlines()
                     if "\t" in ln]
    col = header.index("s_convergence_time")
    times = [float(r[col]) for r in rows]
    assert times[0] > times[1] > times[2]
