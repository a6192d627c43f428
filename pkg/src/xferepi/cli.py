"""Command line entry point: ``xferepi <subcommand> --config PATH``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, validate_config
from .stages import STAGES, MissingArtifact, run_all, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4

SUBCOMMANDS = (*STAGES, "all", "validate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xferepi",
        description="Simulate SIRD epidemics, train forecasters with and without "
                    "transfer, and report which regime wins.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--force", action="store_true", help="re-run stages even if up to date")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for training")
    p.add_argument("--out", help="run directory (overrides the config's 'output')")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    if args.subcommand == "validate":
        diags = validate_config(args.config)
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        if not diags:
            print(f"{args.config}: ok")
        return EXIT_CONFIG if diags else EXIT_OK

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(args.out or cfg.output)
    try:
        if args.subcommand == "all":
            ran = run_all(cfg, root, force=args.force, jobs=args.jobs)
            print(f"{root}: ran {', '.join(ran) if ran else 'nothing (up to date)'}")
        else:
            ran = run_stage(args.subcommand, cfg, root, force=args.force, jobs=args.jobs)
            print(f"{root}: {args.subcommand} {'done' if ran else 'up to date'}")
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # reported, not raised, so the exit code is stable
        logging.getLogger(__name__).debug("stage failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
