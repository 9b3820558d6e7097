"""Command-line entry point: ``disentangle <experiment> [options]`` and ``disentangle plot CSV``.

Exit codes: 0 success, 1 a run failed (partial report written), 2 invalid config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .experiments import DEFAULTS, EXPERIMENTS, NULLABLE, ConfigError, cells, resolve_config, run, run_dir
from .plotting import PlotError, plot_csv

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="disentangle", description="Run the multiplicative-vs-pointwise experiments.")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="JSON file with config overrides")
        p.add_argument("--out", type=Path, help="output root (default $DISENTANGLE_OUT or .)")
        p.add_argument("--name", help="run directory name (default: timestamp)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
        p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
        for key, default in DEFAULTS[name].items():
            kind = NULLABLE.get(key, type(default))
            hint = ",".join(str(v) for v in default) if isinstance(default, list) else default
            p.add_argument(_flag(key), dest=f"cfg_{key}", default=None, metavar=kind.__name__.upper(),
                           help=f"(default: {hint})")
    p = sub.add_parser("plot", help="render a CSV written by an experiment as SVG")
    p.add_argument("csv", type=Path)
    p.add_argument("--out", type=Path, help="SVG path (default: next to the CSV)")
    return parser


def _overrides(args) -> dict:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot":
        try:
            out = plot_csv(args.csv, args.out)
        except (PlotError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(out)
        return EXIT_OK
    try:
        file_cfg = None
        if args.config is not None:
            try:
                file_cfg = json.loads(args.config.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg = resolve_config(args.command, file_cfg, _overrides(args))
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = args.out or Path(os.environ.get("DISENTANGLE_OUT", "."))
    target = run_dir(root, args.command, args.name)
    if args.dry_run:
        print(json.dumps({"experiment": args.command, "config": cfg, "cells": len(cells(args.command, cfg)),
                          "out": str(target)}, indent=2, sort_keys=True))
        return EXIT_OK
    report = run(args.command, cfg, target, jobs=args.jobs)
    print(target)
    if report["failed"]:
        print("one or more runs failed; see report.json", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
