"""Command-line entry points.

    svi run <spec.json>         run an experiment sweep
    svi plan <spec.json>        print the planner report as JSON
    svi compare <run_dir> <baseline.json>   distances to a baseline precision

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import BudgetInfeasible, ConfigError, ParseError
from .experiments import ExperimentSpec, compare_to_baseline, run_experiment


def _cmd_run(args):
    spec = ExperimentSpec.from_json(args.spec)
    return run_experiment(spec)


def _cmd_plan(args):
    with open(args.spec) as fh:
        doc = json.load(fh)
    planner_doc = doc.get("planner", doc)
    spec = ExperimentSpec(kind="planner-report", target={}, ranks=[], seeds=[],
                          outdir=doc.get("outdir", "."), planner=planner_doc)
    status = run_experiment(spec)
    if status == 0:
        with open(f"{spec.outdir}/plan.json") as fh:
            print(fh.read())
    return status


def _cmd_compare(args):
    rows = compare_to_baseline(args.run_dir, args.baseline)
    for entry in rows:
        print(f"{entry['cell']}: log10 ||fit - baseline||_F = {entry['log10_frob']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="svi",
        description="Low-rank Gaussian stochastic variational inference harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON spec")
    p_run.add_argument("spec")
    p_run.set_defaults(func=_cmd_run)

    p_plan = sub.add_parser("plan", help="print the rank/budget planner report")
    p_plan.add_argument("spec")
    p_plan.set_defaults(func=_cmd_plan)

    p_cmp = sub.add_parser("compare", help="compare fitted states to a baseline")
    p_cmp.add_argument("run_dir")
    p_cmp.add_argument("baseline")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, BudgetInfeasible, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
