"""Command line entry point.

Exit codes: 0 success, 1 usage/configuration error, 2 solver failure,
3 a verification threshold was missed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .io import ConfigError, SnapshotFormatError, load_config
from .optimizer import OptimizerError
from .state import SolverError

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_THRESHOLD = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tumor-control", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{simulate,optimize,gradcheck,verify,sweep}")
    for name, text in [
        ("simulate", "forward solve with monitors and snapshots"),
        ("optimize", "projected-gradient optimal control"),
        ("gradcheck", "adjoint gradient against central differences"),
        ("verify", "full verification probe battery"),
        ("sweep", "run a grid of overrides independently"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (default: output.directory)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            p.add_argument("--sweep", action="append", default=[], metavar="SECTION.KEY=V1,V2,...",
                           required=True)
            p.add_argument("--task", choices=["simulate", "optimize", "gradcheck", "verify"], default="simulate")
            p.add_argument("--jobs", type=int, default=1)
    return parser


def _error_line(kind: str, message: str, code: int):
    print(json.dumps({"error": kind, "message": message, "exit": code}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        parser.print_help(sys.stderr)
        _error_line("usage-error", str(exc), EXIT_USAGE)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        out = args.out or Path(cfg["output"]["directory"])
        if args.command == "sweep":
            grid = {}
            for item in args.sweep:
                key, sep, vals = item.partition("=")
                if not sep or "." not in key:
                    raise ConfigError("parse-error", f"--sweep must look like section.key=v1,v2; got {item!r}")
                grid[key.strip()] = [v.strip() for v in vals.split(",") if v.strip()]
            summary = runner.sweep(cfg.text, overrides, grid, args.task, out, args.jobs)
        else:
            summary = runner.TASKS[args.command](cfg, out)
    except ConfigError as exc:
        _error_line(exc.kind, str(exc), EXIT_USAGE)
        return EXIT_USAGE
    except (SolverError, OptimizerError, SnapshotFormatError) as exc:
        _error_line(type(exc).__name__, str(exc), EXIT_SOLVER)
        return EXIT_SOLVER

    for key, value in summary.items():
        if key == "passed":
            continue
        if key == "max_rel_err":
            op = "<=" if summary["passed"] else ">"
            print(f"max_rel_err {op} {summary['threshold']:g} (max_rel_err={value:.3e})")
        elif key != "threshold":
            print(f"{key}={value}")
    if not summary.get("passed", True):
        _error_line("verification-threshold", f"{args.command}: threshold failure {summary.get('failed', '')}",
                    EXIT_THRESHOLD)
        return EXIT_THRESHOLD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
