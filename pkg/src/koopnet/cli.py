"""Command-line entry point.

Subcommands: simulate, identify, baseline-dual, sweep, score. Exit codes:
0 success, 2 configuration/validation error, 3 numerical failure, 4 finished
with partial results (some nodes failed and were recorded).
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .numerics import NumericalFailure
from .simulate import DatasetFormatError, DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _default_threads() -> int:
    env = os.environ.get("KOOPNET_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopnet",
        description="Identify nonlinear network topology and local dynamics from snapshots",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--seed-override", type=int, default=None, help="override all seeds")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")

    common(sub.add_parser("simulate", help="generate model and snapshot dataset"))
    common(sub.add_parser("identify", help="run two-step identification"), data=True)
    common(sub.add_parser("baseline-dual", help="run the global dual-method baseline"), data=True)
    common(sub.add_parser("sweep", help="sweep one experiment axis"))

    score = sub.add_parser("score", help="score stored results against a truth manifest")
    score.add_argument("--truth", required=True, help="ground-truth model manifest")
    score.add_argument("--params", required=True, help="parameters.json from a run")
    score.add_argument("--topology", required=True, help="topology.json from a run")
    score.add_argument("--out", required=True, help="output directory")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.threads is not None:
        cfg.threads = max(1, args.threads)
    elif cfg.threads == 1:
        cfg.threads = _default_threads()
    if args.seed_override is not None:
        cfg.model.seed = int(args.seed_override)
        cfg.dataset.seed = int(args.seed_override) + 1000003
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from . import runner

    try:
        if args.command == "simulate":
            cfg = _load(args)
            paths = runner.run_simulate(cfg, args.out)
            print(f"dataset written to {paths['dataset']}")
            return EXIT_OK
        if args.command in ("identify", "baseline-dual"):
            cfg = _load(args)
            method = "two_step" if args.command == "identify" else "dual_baseline"
            report, failures = runner.run_identify(cfg, args.data, args.out, method=method)
            if report is None:
                print("identification finished; no truth manifest found, scoring skipped")
            else:
                print(report.to_text())
            if failures:
                print(f"warning: {len(failures)} node(s) failed; partial results written")
                return EXIT_PARTIAL
            return EXIT_OK
        if args.command == "sweep":
            cfg = _load(args)
            rows = runner.run_sweep(cfg, args.out)
            print(f"{len(rows)} sweep rows written to {args.out}")
            return EXIT_OK
        if args.command == "score":
            report = runner.run_score(args.truth, args.params, args.topology, args.out)
            print(report.to_text())
            return EXIT_OK
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, DatasetFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
