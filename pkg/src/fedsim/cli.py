"""Command line entry point: ``fedsim run|sweep|report``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import FederationConfig
from .errors import FedSimError
from .harness import (
    ExperimentSpec,
    format_summary,
    read_rows,
    run_experiment,
    summarize,
    write_outputs,
)


def _cmd_run(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    rows = run_experiment(spec)
    write_outputs(rows, args.out)
    print(format_summary(summarize(rows)))
    return 0


def _cmd_sweep(args) -> int:
    config = FederationConfig() if args.rounds is None else FederationConfig(rounds=args.rounds)
    spec = ExperimentSpec(
        scenario="sweep-centers",
        users=[args.user],
        max_centers=args.max_centers,
        seeds=list(range(args.seeds)),
        config=config,
    )
    rows = run_experiment(spec)
    if args.out is not None:
        write_outputs(rows, args.out)
    print(format_summary(summarize(rows)))
    return 0


def _cmd_report(args) -> int:
    path = Path(args.indir) / "rows.csv"
    rows = read_rows(path)
    summary = summarize(rows)
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(format_summary(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated anti-spoofing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment described by a JSON spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="federated runs over a growing number of data centers")
    p.add_argument("--user", required=True)
    p.add_argument("--max-centers", type=int, required=True)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="summarize rows.csv from an output directory")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FedSimError, OSError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
