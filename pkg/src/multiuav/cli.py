"""Command line: solve one scheme, sweep a parameter, validate a run."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .baselines import SchemeId, access_delay, run_scheme
from .io import ScenarioFileError, load_scenario, read_run, write_run
from .model import ScenarioError, evaluate_rates, validate_feasibility
from .planner import BcdConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4

CHECK_KINDS = ("periodicity", "speed", "separation", "power_box", "schedule_range",
               "schedule_binary", "uav_load", "user_load")
RATE_TOL = 1e-9

log = logging.getLogger("multiuav")


def _config(scenario, max_iters, eps) -> BcdConfig:
    return BcdConfig(convergence_threshold=eps if eps is not None else
                     scenario.convergence_threshold,
                     max_iterations=max_iters if max_iters is not None else 100)


def solve_to_dir(scenario, scheme, out_dir, config, seed=None):
    """Run a scheme end to end and write its outputs; returns the summary."""
    result = run_scheme(scenario, scheme, config)
    rep = result.report
    binary = evaluate_rates(scenario, result.binary_schedule, rep.trajectory, rep.power)
    relaxed = evaluate_rates(scenario, rep.schedule, rep.trajectory, rep.power)
    summary = {
        "scheme": SchemeId(scheme).value,
        "eta": binary.min_rate,
        "eta_relaxed": relaxed.min_rate,
        "per_user_rates": binary.average_rates.tolist(),
        "per_user_rates_relaxed": relaxed.average_rates.tolist(),
        "access_delay_s": access_delay(result.binary_schedule, scenario.period).tolist(),
        "iterations": rep.iterations,
        "converged": rep.converged,
        "error": rep.error,
        "seed": seed,
        "num_users": scenario.num_users,
        "num_uavs": scenario.num_uavs,
        "num_slots": scenario.num_slots,
        "subslot_factor": scenario.subslot_factor,
        "period": scenario.period,
        "block_times_s": rep.block_times,
        "warnings": rep.warnings,
    }
    write_run(out_dir, summary, rep.trajectory, rep.power, result.binary_schedule,
              rep.schedule, list(zip(rep.trace, rep.lp_trace)), scenario)
    return summary


def cmd_solve(args) -> int:
    spec = load_scenario(args.scenario, {"period": args.period, "num_uavs": args.uavs,
                                         "seed": args.seed})
    scenario = spec.scenario
    config = _config(scenario, args.max_iters, args.eps)
    summary = solve_to_dir(scenario, args.scheme, args.out, config, spec.seed)
    print(f"scheme={summary['scheme']} eta={summary['eta']:.6f} "
          f"eta_relaxed={summary['eta_relaxed']:.6f} iterations={summary['iterations']} "
          f"converged={summary['converged']}")
    if summary["error"]:
        print(f"error: {summary['error']}", file=sys.stderr)
    return EXIT_OK if summary["converged"] and not summary["error"] else EXIT_NOT_CONVERGED


def _sweep_point(task):
    scenario_path, param, value, scheme, seed, max_iters, eps = task
    overrides = {"seed": seed, ("period" if param == "period" else "num_uavs"): value}
    t0 = time.perf_counter()
    try:
        spec = load_scenario(scenario_path, overrides)
        result = run_scheme(spec.scenario, scheme, _config(spec.scenario, max_iters, eps))
        rep = result.report
        status = "error: " + rep.error if rep.error else (
            "converged" if rep.converged else "max_iterations")
        row = [scheme, value, repr(result.eta_binary), repr(rep.eta), rep.iterations]
    except (ScenarioError, ScenarioFileError, ValueError, ArithmeticError) as exc:
        status = f"error: {exc}"
        row = [scheme, value, "nan", "nan", 0]
    return row + [f"{time.perf_counter() - t0:.3f}", status]


def _parse_values(text, param):
    try:
        values = [float(v) if param == "period" else int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ScenarioFileError(f"cannot parse values {text!r}", "--values")
    if not values:
        raise ScenarioFileError("no values given", "--values")
    if values != sorted(values):
        raise ScenarioFileError("values must be in ascending order", "--values")
    return values


def cmd_sweep(args) -> int:
    values = _parse_values(args.values, args.param)
    schemes = [SchemeId(s.strip()).value for s in args.schemes.split(",") if s.strip()]
    load_scenario(args.scenario, {"seed": args.seed})  # fail fast on a bad file
    tasks = [(args.scenario, args.param, v, s, args.seed, args.max_iters, args.eps)
             for s in schemes for v in values]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / ".sweep.csv.tmp"
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "value", "eta", "eta_relaxed", "iterations", "wall_time", "status"])
        w.writerows(rows)
    tmp.replace(out / "sweep.csv")
    for row in rows:
        print(",".join(str(c) for c in row))
    return EXIT_OK if all(r[-1] == "converged" for r in rows) else EXIT_NOT_CONVERGED


def validation_report(scenario, run) -> list[tuple[str, bool, str]]:
    """(check, passed, detail) per invariant kind plus the rate re-evaluation."""
    violations = validate_feasibility(scenario, run.schedule, run.trajectory, run.power)
    lines = []
    for kind in CHECK_KINDS:
        hits = [v for v in violations if v.kind == kind]
        detail = "; ".join(f"{v.indices} {v.detail or v.magnitude}" for v in hits[:5])
        if len(hits) > 5:
            detail += f"; ... {len(hits)} in total"
        lines.append((kind, not hits, detail))
    if violations:
        lines.append(("rates", None, "skipped: outputs are infeasible"))
        return lines
    eta = evaluate_rates(scenario, run.schedule, run.trajectory, run.power).min_rate
    ok = abs(eta - run.summary["eta"]) <= RATE_TOL * max(1.0, abs(eta))
    lines.append(("rates", ok, f"re-evaluated eta={eta!r}, summary eta={run.summary['eta']!r}"))
    return lines


def cmd_validate(args) -> int:
    spec = load_scenario(args.scenario)
    run = read_run(args.run, spec.scenario)
    lines = validation_report(spec.scenario, run)
    for name, ok, detail in lines:
        tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        print(f"{tag} {name}" + (f": {detail}" if detail else ""))
    return EXIT_OK if all(ok is not False for _, ok, _ in lines) else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiuav",
                                     description="Max-min rate planning for multi-UAV downlinks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    schemes = [s.value for s in SchemeId]

    p = sub.add_parser("solve", help="run one scheme and write its outputs")
    p.add_argument("--scenario", required=True)
    p.add_argument("--scheme", choices=schemes, default="joint")
    p.add_argument("--out", required=True)
    p.add_argument("--period", type=float)
    p.add_argument("--uavs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--eps", type=float)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run schemes over a list of parameter values")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", choices=["period", "num_uavs"], required=True)
    p.add_argument("--values", required=True, help="comma-separated, ascending")
    p.add_argument("--schemes", default="joint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="re-check a run directory")
    p.add_argument("--scenario", required=True)
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ScenarioFileError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
