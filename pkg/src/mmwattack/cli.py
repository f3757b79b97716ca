"""Command-line entry point.

    mmwattack run CONFIG [--seed N] [--out DIR]
    mmwattack sweep CONFIG --grid GRID [--jobs J] [--seed N] [--out DIR]
    mmwattack validate CONFIG [--seed N] [--out DIR]

Exit status is 0 on success, 2 for configuration errors and 3 for numeric
failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .core import NumericError, StepSizeError
from .runner import CONFIG_ERRORS, load_config, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("mmwattack")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmwattack", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    common(sub.add_parser("run", help="run one experiment"))
    sweep = sub.add_parser("sweep", help="run a parameter sweep")
    common(sweep)
    sweep.add_argument("--grid", required=True, help="sweep grid JSON file")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel cells")
    common(sub.add_parser("validate", help="check a config without running it"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "validate":
            cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
            print(json.dumps(cfg.resolved, indent=2))
        elif args.command == "run":
            outcome = run_experiment(args.config, output_dir=args.out, seed=args.seed)
            log.info("wrote %s", outcome.output_dir)
            print(json.dumps(outcome.metrics, indent=2))
        else:
            if args.jobs < 1:
                raise ValueError("--jobs must be >= 1")
            path = run_sweep(args.config, args.grid, output_dir=args.out, jobs=args.jobs, seed=args.seed)
            print(path)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, StepSizeError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
