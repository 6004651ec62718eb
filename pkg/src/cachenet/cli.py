"""Command-line entry point.

Exit status: 0 success, 1 comparison outside tolerance, 2 usage error,
3 invalid configuration, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import InvalidConfigError, InvalidParameterError, NumericalFailure
from .experiments import KINDS, ExperimentConfig, NoOverlapError, compare_curves, load_config, run

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _parser():
    ap = argparse.ArgumentParser(prog="cachenet", description="Cache-enabled wireless network experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", type=Path, help="JSON config; defaults are used when omitted")
        sp.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="parallel replication workers")
    cp = sub.add_parser("compare", help="compare a simulated tradeoff CSV with a theoretical curve CSV")
    cp.add_argument("simulated", type=Path)
    cp.add_argument("theoretical", type=Path)
    cp.add_argument("--tolerance", type=float, default=0.25)
    cp.add_argument("--branch", type=int, default=None)
    cp.add_argument("--out", type=Path, default=None, help="directory for comparison.csv")
    return ap


def _compare(args):
    try:
        rep = compare_curves(args.simulated, args.theoretical, args.tolerance, branch=args.branch)
    except NoOverlapError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, KeyError, ValueError) as e:
        print(f"error: cannot read curves: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rep.write_csv(args.out / "comparison.csv")
    print(f"points={len(rep.p)} max_abs_dev={rep.max_abs_deviation:.4f} "
          f"mean_abs_dev={rep.mean_abs_deviation:.4f} tolerance={rep.tolerance:g} "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def main(argv=None):
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    if args.command == "compare":
        return _compare(args)
    if args.workers < 1 or args.seed_offset < 0:
        print("error: --workers must be >= 1 and --seed-offset >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.config is None:
            cfg = ExperimentConfig(args.command)
        else:
            cfg = load_config(args.config)
        if cfg.kind != args.command:
            print(f"error: config kind {cfg.kind!r} does not match subcommand {args.command!r}", file=sys.stderr)
            return EXIT_USAGE
        cfg = cfg.with_seed_offset(args.seed_offset)
        man = run(cfg, args.out, workers=args.workers)
    except InvalidConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_USAGE if e.field == "kind" else EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidParameterError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    for name in sorted(man.outputs) + ["manifest.json"]:
        print(args.out / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
