#!/usr/bin/env python
"""
Command line entry point of the hyperbolic geometry workbench.

Usage:
    python main.py run --config config/experiments/f2_poincare.json [--out DIR] [--seed N] [--jobs N]
    python main.py list-experiments [FILTER]

Exit codes: 0 all asserted checks passed, 1 an asserted check failed,
2 the config is invalid, 3 a numerical failure aborted the run.
"""

import argparse
import logging
import logging.config
import sys
from typing import List, Optional

from dotenv import load_dotenv

load_dotenv()

from core.config import LOGGING_CONFIG  # noqa: E402
from core.errors import ConfigError, WorkbenchError  # noqa: E402
from core.runner import EXIT_CONFIG, EXIT_NUMERICAL, list_experiments, run_experiment  # noqa: E402

logger = logging.getLogger("workbench")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run numerical experiments on Gromov hyperbolic spaces.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run one experiment config")
    run.add_argument("--config", required=True, help="Path to the experiment JSON")
    run.add_argument("--out", default=None, help="Output directory (default results/<name>)")
    run.add_argument("--seed", type=int, default=None, help="Override the config seed")
    run.add_argument("--jobs", type=int, default=None, help="Worker processes for independent sweep points")

    listing = subparsers.add_parser("list-experiments", help="List the bundled experiment configs")
    listing.add_argument("filter", nargs="?", default=None, help="Kind, or part of a name")
    listing.add_argument("--dir", default=None, help="Config directory to scan")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.config.dictConfig(LOGGING_CONFIG)

    if args.command == "list-experiments":
        catalog = list_experiments(args.filter, args.dir)
        for entry in catalog:
            print(f"{entry['name']:<28} {entry['kind']:<12} {entry['description']}")
        if not catalog:
            logger.warning(f"No experiments match {args.filter!r}")
        return 0

    try:
        return run_experiment(args.config, args.out, args.seed, args.jobs)
    except ConfigError as e:
        logger.error(f"Invalid experiment config: {e}")
        return EXIT_CONFIG
    except WorkbenchError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
