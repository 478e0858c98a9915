"""Command line: ``run``, ``sweep`` and ``verify``.

Exit codes: 0 success, 1 a check or run failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .config import load_config
from .core import ConfigError, MalformedRoundError
from .experiment import WORKERS_ENV, SweepError, run_experiment, run_sweep
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sleepfair", description="Sleeping-experts group fairness experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one config and write per-seed trajectories and summaries")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, help="run only this seed (default: the config's seeds)")
    run.add_argument("--out", required=True)

    sweep = sub.add_parser("sweep", help="sweep one config field over values and seeds", epilog=f"{WORKERS_ENV} caps the number of worker processes.")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, help="name=v1,v2,... e.g. instance.T=4096,8192")
    sweep.add_argument("--seeds", type=int, required=True, help="seeds 0..K-1 per value")
    sweep.add_argument("--out", required=True)

    verify = sub.add_parser("verify", help="run an acceptance suite")
    verify.add_argument("--suite", required=True, help=f"one of: {', '.join([*SUITES, 'all'])}")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            seeds = None if args.seed is None else [args.seed]
            for report in run_experiment(cfg, seeds, args.out):
                print(f"seed {report['seed']}: wrote {args.out}/summary_{report['seed']}.json")
            return EXIT_OK
        if args.command == "sweep":
            cfg = load_config(args.config)
            summary = run_sweep(cfg, args.axis, args.seeds, args.out)
            print(f"{len(summary['cells'])} cells x {args.seeds} seeds: wrote {args.out}/sweep.json")
            for g, fit in (summary["slopes"] or {}).items():
                print(f"slope {g}: " + ("undefined" if fit is None else f"{fit['slope']:.4f} +/- {fit['stderr']:.4f}"))
            return EXIT_OK
        if args.suite != "all" and args.suite not in SUITES:
            print(f"unknown suite {args.suite!r}; valid suites: {', '.join([*SUITES, 'all'])}", file=sys.stderr)
            return EXIT_CONFIG
        checks = run_suite(args.suite)
        for check in checks:
            print(check.line())
        return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedRoundError, SweepError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
