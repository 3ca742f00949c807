"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, report
from .config import load_config
from .errors import ConfigError, DataError, NumericError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the TOML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="root seed override")
    parser.add_argument("--out", default="out", help="artifact directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genfl",
                                     description="generative client-selection laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("collect", "train", "select"):
        _add_common(sub.add_parser(name))

    run = sub.add_parser("run")
    _add_common(run)
    run.add_argument("--policy", required=True, choices=harness.POLICIES)

    sweep = sub.add_parser("sweep")
    _add_common(sweep)
    sweep.add_argument("--param", required=True, choices=("alpha", "topk"))
    sweep.add_argument("--grid", required=True,
                       help="comma-separated values, e.g. 0.1,0.5,0.9")

    ablate = sub.add_parser("ablate")
    _add_common(ablate)

    rep = sub.add_parser("report")
    _add_common(rep)
    rep.add_argument("--metrics-dir", default=None,
                     help="directory holding metrics_*.csv (default: --out)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        out_dir = Path(args.out)
        if args.command == "collect":
            path = harness.run_collect(cfg, out_dir)
        elif args.command == "train":
            path = harness.run_train(cfg, out_dir)
        elif args.command == "select":
            path = harness.run_select(cfg, out_dir)
        elif args.command == "run":
            path = harness.run_run(cfg, args.policy, out_dir)
        elif args.command == "sweep":
            try:
                grid = [float(v) for v in args.grid.split(",") if v]
            except ValueError as exc:
                raise ConfigError(f"bad sweep grid {args.grid!r}") from exc
            path = harness.run_sweep(cfg, args.param, grid, out_dir)
        elif args.command == "ablate":
            path = harness.run_ablate(cfg, out_dir)
        elif args.command == "report":
            metrics_dir = Path(args.metrics_dir) if args.metrics_dir else out_dir
            path = report.write_report(metrics_dir, out_dir / "report")
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
