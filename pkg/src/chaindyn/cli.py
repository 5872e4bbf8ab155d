"""Command-line entry point.

    chaindyn run <scenario.scn> [--out DIR] [--dt X] [--t-end X]
    chaindyn oracle [--seed N] [--trials N]
    chaindyn sweep <scenario.scn> --param name=v1,v2,... [--out DIR] [--jobs N]

Exit codes: 0 all monitors pass, 1 monitor failure or oracle mismatch,
2 scenario parse error (diagnostics on stderr), 3 solver failure.
The output directory defaults to $CHAINDYN_OUT, then ./out.

Sweep parameters: ``dt``, ``t_end`` (integration overrides), ``kd_scale``,
``lam_scale`` (gain multipliers).  A ``dt`` sweep reports the observed
integrator convergence order between successive grid points.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import explicit3, scenario as scn
from .errors import ChainDynError, SolverFailed
from .simulate import run_closed_loop, run_open_loop


def _out_dir(flag_value) -> Path:
    out = flag_value or os.environ.get("CHAINDYN_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _apply_overrides(s: scn.Scenario, dt=None, t_end=None, kd_scale=None,
                     lam_scale=None) -> scn.Scenario:
    integ = s.integration
    if dt is not None or t_end is not None:
        integ = dataclasses.replace(
            integ, dt=dt if dt is not None else integ.dt,
            t_end=t_end if t_end is not None else integ.t_end)
    out = dataclasses.replace(s, integration=integ)
    if kd_scale is not None:
        out.kd = np.asarray(out.kd) * kd_scale if isinstance(
            out.kd, np.ndarray) else out.kd * kd_scale
    if lam_scale is not None:
        out.lam = np.asarray(out.lam) * lam_scale if isinstance(
            out.lam, np.ndarray) else out.lam * lam_scale
    return out


def _run_scenario(s: scn.Scenario):
    """Execute one scenario; returns (trace, report)."""
    initial = s.initial_state()
    t0 = time.perf_counter()
    if s.mode == "open_loop":
        trace = run_open_loop(s.spec, initial, s.pulse_schedule(),
                              s.integration,
                              compensate_gravity=s.compensate_gravity)
    else:
        trace = run_closed_loop(s.spec, initial, s.build_trajectory(initial),
                                s.controller_config(), s.integration,
                                disturbances=s.pulse_schedule())
    wall = time.perf_counter() - t0
    monitors = scn.evaluate_monitors(s, trace)
    report = scn.RunReport(scenario_hash=s.config_hash, mode=s.mode,
                           wall_clock=wall, monitors=monitors)
    return trace, report


def cmd_run(args) -> int:
    try:
        s = scn.load_scenario(args.scenario)
    except (OSError, scn.ScenarioError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    s = _apply_overrides(s, dt=args.dt, t_end=args.t_end)
    try:
        trace, report = _run_scenario(s)
    except SolverFailed as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except ChainDynError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    out = _out_dir(args.out)
    stem = Path(args.scenario).stem
    scn.trace_to_csv(trace, s, out / f"{stem}_trace.csv")
    report_text = report.render()
    (out / f"{stem}_report.txt").write_text(report_text, encoding="utf-8")
    print(report_text, end="")
    print(f"trace: {out / (stem + '_trace.csv')}")
    return 0 if report.passed else 1


def cmd_oracle(args) -> int:
    outcome = explicit3.run_oracle_trials(seed=args.seed, trials=args.trials)
    if outcome.trials == 0:
        print("no trials")
        return 0
    print(f"{outcome.trials} random three-body comparisons "
          f"(seed {args.seed})")
    for name, dev in sorted(outcome.max_deviation.items()):
        print(f"  {name:8s} max entrywise deviation {dev:.3e}")
    if not outcome.passed:
        print(f"MISMATCH in block {outcome.failed_block} at trial "
              f"{outcome.failed_trial}, index {outcome.failed_index}")
        return 1
    print("all blocks and solves agree")
    return 0


def _sweep_one(payload):
    """Worker: run one grid point; returns a plain-dict row."""
    text, name, value = payload
    s = scn.parse_scenario(text)
    overrides = {name: value} if name in ("dt", "t_end") else \
        {name.replace("-", "_"): value}
    try:
        s = _apply_overrides(s, **overrides)
        trace, report = _run_scenario(s)
    except (ChainDynError, ValueError) as exc:
        return {"param": value, "status": f"error: {exc}", "passed": False,
                "final_state": None}
    row = {"param": value, "status": "ok", "passed": report.passed,
           "wall": report.wall_clock}
    for m in report.monitors:
        row[m.name] = m.value
    if s.mode != "open_loop":
        # time for the sliding surface to fall to 1% of its start
        t = trace.times
        snorm = trace.array("sliding_norm")
        target = 0.01 * snorm[0] if snorm[0] > 0 else 0.0
        below = np.nonzero(snorm <= target)[0]
        row["s_convergence_time"] = float(t[below[0]]) if below.size else \
            float("nan")
    final = trace.final_state()
    row["final_state"] = np.concatenate([
        final.positions.ravel(), final.quaternions.ravel(),
        final.lin_vel.ravel(), final.ang_vel.ravel()])
    return row


def cmd_sweep(args) -> int:
    try:
        text = Path(args.scenario).read_text(encoding="utf-8")
        scn.parse_scenario(text)          # fail fast on bad scenarios
    except (OSError, scn.ScenarioError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    name, _, values = args.param.partition("=")
    values = [float(v) for v in values.split(",") if v] if values else []
    if not values:
        print("empty grid")
        return 0
    payloads = [(text, name, v) for v in values]
    jobs = max(1, min(args.jobs, len(payloads)))
    if jobs == 1:
        rows = [_sweep_one(p) for p in payloads]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_one, payloads))

    # convergence order column for dt sweeps (needs a fixed grid ratio)
    orders = [float("nan")] * len(rows)
    if name == "dt" and len(rows) >= 3:
        for i in range(len(rows) - 2):
            s0, s1, s2 = (rows[i + k]["final_state"] for k in range(3))
            if s0 is None or s1 is None or s2 is None:
                continue
            e01 = np.linalg.norm(s0 - s1)
            e12 = np.linalg.norm(s1 - s2)
            ratio = values[i] / values[i + 1]
            if e12 > 0 and ratio > 1:
                orders[i + 1] = float(np.log(e01 / e12) / np.log(ratio))

    keys = sorted({k for r in rows for k in r
                   if k not in ("final_state", "param", "status")})
    header = [name] + keys + ["order"]
    lines = ["\t".join(header)]
    for i, r in enumerate(rows):
        cells = [f"{r['param']:g}"]
        for k in keys:
            v = r.get(k, "")
            cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        cells.append(f"{orders[i]:.3f}" if np.isfinite(orders[i]) else "-")
        lines.append("\t".join(cells))
    table = "\n".join(lines)
    print(table)
    out = _out_dir(args.out)
    (out / f"{Path(args.scenario).stem}_sweep.csv").write_text(
        table.replace("\t", ",") + "\n", encoding="utf-8")
    failures = [r for r in rows if r["status"] != "ok"]
    if failures:
        print(f"{len(failures)} grid point(s) failed (recorded in table)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chaindyn",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="simulate a scenario file")
    runp.add_argument("scenario")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--dt", type=float, default=None)
    runp.add_argument("--t-end", dest="t_end", type=float, default=None)
    runp.set_defaults(func=cmd_run)

    orp = sub.add_parser("oracle",
                         help="randomized check against the explicit "
                              "three-body formulation")
    orp.add_argument("--seed", type=int, default=0)
    orp.add_argument("--trials", type=int, default=1000)
    orp.set_defaults(func=cmd_oracle)

    swp = sub.add_parser("sweep", help="grid sweep over one parameter")
    swp.add_argument("scenario")
    swp.add_argument("--param", required=True,
                     help="name=v1,v2,... (dt, t_end, kd_scale, lam_scale)")
    swp.add_argument("--out", default=None)
    swp.add_argument("--jobs", type=int, default=min(4, os.cpu_count() or 1))
    swp.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
