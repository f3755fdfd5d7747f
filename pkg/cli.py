#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Command line v1.0
Wasserstein DRMDP certification toolkit
`run`, `validate` and `ingest` commands with exit codes
0 all invariants pass, 1 some invariant fails, 2 configuration or input error, 3 solver error
"""

import argparse
import json
import logging
import os
import re
import sys
from typing import List, Optional, Tuple

from business_logic import ExperimentRunner
from config import dump_mdp, load_config
from data_processor import DataProcessor, write_episodes
from errors import ConfigError
from excel_generator import ResultWriter

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def parse_dims(text: str) -> Tuple[int, int]:
    """'3,2' or '3x2' to (|S|, |A|)"""
    match = re.fullmatch(r"\s*(\d+)\s*[,x]\s*(\d+)\s*", text)
    if not match:
        raise argparse.ArgumentTypeError(f"dims must look like S,A (e.g. 3,2), got {text!r}")
    dims = int(match.group(1)), int(match.group(2))
    if min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wdrmdp", description="Wasserstein DRMDP certification toolkit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiment named in a config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--out", help="override the results path")
    run.add_argument("--threads", type=int, help="worker threads for Monte Carlo trials")
    run.add_argument("--plots", action="store_true", help="also write PNG charts next to the results")

    validate = commands.add_parser("validate", help="parse and validate a config")
    validate.add_argument("config")
    validate.add_argument("--dump-mdp", action="store_true", help="print the validated mdp section")

    ingest = commands.add_parser("ingest", help="validate an episode CSV")
    ingest.add_argument("csv")
    ingest.add_argument("--dims", type=parse_dims, required=True, help="S,A")
    ingest.add_argument("--out", help="write the validated episodes to this CSV")
    return parser


def _set_verbosity(args: argparse.Namespace) -> None:
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.quiet:
        logging.getLogger().setLevel(logging.WARNING)


def command_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, {"seed": args.seed, "output": args.out, "threads": args.threads})
    success, record, stats = ExperimentRunner().run_experiment(config)
    if not success:
        print(f"solver error: {record}", file=sys.stderr)
        return EXIT_SOLVER
    written = ResultWriter().write_all(record, config.output)
    if args.plots:
        from generate_reports import generate_charts
        written["png"] = generate_charts(config.output, os.path.dirname(config.output) or ".")
    for kind, paths in written.items():
        for path in paths:
            logger.info(f"{kind}: {path}")
    print(f"{record.experiment}: {'PASS' if record.passed else 'FAIL'} -> {config.output}")
    return EXIT_PASS if record.passed else EXIT_FAIL


def command_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    print(f"OK {config.experiment}: |S|={config.mdp.num_states}, |A|={config.mdp.num_actions}, "
          f"gamma={config.mdp.discount}, seed={config.seed}, digest={config.digest[:12]}")
    if args.dump_mdp:
        print(dump_mdp(config.mdp), end="")
    return EXIT_PASS


def command_ingest(args: argparse.Namespace) -> int:
    success, logs, stats = DataProcessor().process_episode_file(args.csv, args.dims)
    if not success:
        print(f"ingest error: {logs}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        write_episodes(logs, args.out)
    print(json.dumps(stats))
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_verbosity(args)
    handlers = {"run": command_run, "validate": command_validate, "ingest": command_ingest}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e.describe()}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
