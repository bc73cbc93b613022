"""Command-line entry points for the bagging pipeline.

Exit codes: 0 success, 2 validation error, 3 planning failure, 4 servo
failure, 5 I/O or parse error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ParseError, PlanningFailed, SoibagError, ValidationError
from .extraction import GmmConfig, extract_soi, load_cloud_xyz
from .harness import Scenario, load_scenario, run_pipeline
from .planning import plan_full

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PLANNING = 3
EXIT_SERVO = 4
EXIT_IO = 5


def _fail(code, error_kind, message):
    json.dump({"error": error_kind, "message": str(message)}, sys.stderr)
    sys.stderr.write("\n")
    return code


def _cmd_run(args):
    try:
        scenario = load_scenario(args.scenario)
    except ParseError as exc:
        return _fail(EXIT_IO, "ParseError", exc)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, "ValidationError", exc)
    if args.seed is not None:
        scenario = Scenario(
            **{**scenario.__dict__, "seed": args.seed}
        )
    report = run_pipeline(scenario, out_dir=args.out)
    print(json.dumps(report.to_dict(include_timing=True), sort_keys=True, indent=2))
    for stage, code in (
        ("extraction", EXIT_VALIDATION),
        ("generation", EXIT_VALIDATION),
        ("planning", EXIT_PLANNING),
        ("servoing", EXIT_SERVO),
    ):
        status = report.stages.get(stage, "skipped")
        if status.startswith("error"):
            return _fail(code, f"{stage}_failure", status)
    return EXIT_OK if report.success else EXIT_SERVO


def _cmd_batch(args):
    try:
        scenario_files = sorted(Path(args.dir).glob("*.yaml"))
        if not scenario_files:
            return _fail(EXIT_IO, "IOError", f"no *.yaml scenarios in {args.dir}")
    except OSError as exc:
        return _fail(EXIT_IO, "IOError", exc)

    rows = []
    for path in scenario_files:
        try:
            base = load_scenario(path)
        except (ParseError, ValidationError) as exc:
            return _fail(EXIT_VALIDATION, "ValidationError", f"{path}: {exc}")
        for trial in range(args.trials):
            scenario = Scenario(**{**base.__dict__, "seed": base.seed + trial})
            report = run_pipeline(scenario)
            rows.append(report)

    by_name = {}
    for rep in rows:
        by_name.setdefault(rep.scenario, []).append(rep)
    table = []
    for name, reps in sorted(by_name.items()):
        times = [r.planning_time_s for r in reps if r.planning_time_s is not None]
        table.append(
            {
                "scenario": name,
                "trials": len(reps),
                "successes": sum(r.success for r in reps),
                "planning_successes": sum(
                    r.stages.get("planning") == "ok" for r in reps
                ),
                "planning_time_mean_s": float(np.mean(times)) if times else None,
                "planning_time_std_s": float(np.std(times)) if times else None,
            }
        )
    print(json.dumps(table, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_extract(args):
    try:
        cloud = load_cloud_xyz(args.cloud)
    except ParseError as exc:
        return _fail(EXIT_IO, "ParseError", exc)
    try:
        cfg = GmmConfig(n_x=args.n_x)
        soi = extract_soi(cloud, cfg)
    except (ValueError, SoibagError) as exc:
        return _fail(EXIT_VALIDATION, "ExtractionError", exc)
    print(json.dumps({"soi": soi.points.tolist()}, sort_keys=True))
    return EXIT_OK


def _cmd_plan(args):
    try:
        scenario = load_scenario(args.scenario)
    except ParseError as exc:
        return _fail(EXIT_IO, "ParseError", exc)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, "ValidationError", exc)

    from .generation import generate_goal_soi, make_bagging_soi
    from .simulator import BagSim

    plant = BagSim(cfg=scenario.bag, seed=scenario.seed)
    g0 = plant.reset()
    try:
        g_dag = make_bagging_soi(
            scenario.vertices, g0, scenario.constraints, scenario.bag.n_x
        )
        g_star = generate_goal_soi(g_dag, scenario.lambda_d)
        path = plan_full(
            g0, g_dag.soi, g_star, list(scenario.obstacles), scenario.planner
        )
    except PlanningFailed as exc:
        return _fail(EXIT_PLANNING, "PlanningFailed", exc)
    except SoibagError as exc:
        return _fail(EXIT_VALIDATION, "GenerationError", exc)
    nodes = [
        {"index": i, "soi": node.soi.points.tolist()}
        for i, node in enumerate(path.subgoals())
    ]
    print(json.dumps({"nodes": nodes}, sort_keys=True))
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="soibag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory for logs")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_batch = sub.add_parser("batch", help="run every scenario in a directory")
    p_batch.add_argument("dir")
    p_batch.add_argument("--trials", type=int, default=1)
    p_batch.set_defaults(fn=_cmd_batch)

    p_extract = sub.add_parser("extract", help="extract a rim from an xyz cloud")
    p_extract.add_argument("cloud")
    p_extract.add_argument("--n-x", type=int, default=32, dest="n_x")
    p_extract.set_defaults(fn=_cmd_extract)

    p_plan = sub.add_parser("plan", help="plan only; print the subgoal path")
    p_plan.add_argument("scenario")
    p_plan.set_defaults(fn=_cmd_plan)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
