"""Command line entry point: ``brwpolymer <subcommand> [--config ...] [--seed ...]``."""

from __future__ import annotations

import argparse
import sys

from ..forest import AllExtinct, ParticleCapExceeded
from ..walk import HorizonTooSmall, WeightCollapse
from .config import DEFAULTS, ConfigError, load_config
from .runners import RUNNERS, BudgetExceeded


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brwpolymer", description="Branching random walk polymer experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in DEFAULTS:
        s = sub.add_parser(name, help=(RUNNERS[name].__doc__ or "").strip().splitlines()[0] if RUNNERS[name].__doc__ else None)
        s.add_argument("--config", help="YAML or JSON file overlaying the defaults")
        s.add_argument("--seed", type=_u64, help="overrides sim.seed")
        s.add_argument("--out", default="results", help="output directory (default: results)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for replicates")
        s.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.command, args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = RUNNERS[args.command](cfg, threads=args.threads)
    except (BudgetExceeded, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (AllExtinct, ParticleCapExceeded, HorizonTooSmall, WeightCollapse) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    report.write(args.out, args.format)
    for s in report.statistics:
        flag = "" if s.passed is None else ("  PASS" if s.passed else "  FAIL")
        tgt = "" if s.target is None else f"  target {s.target:.6g}"
        print(f"{s.name:55s} {s.estimate: .6g} +- {s.standard_error:.3g}{tgt}{flag}")
    print(f"{report.experiment}: {'all pass' if report.all_pass else 'FAIL'} ({report.wall_clock:.1f}s)")
    return 0 if report.all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
