#!/usr/bin/env python3
"""
Branching Fractals Experiment Runner
Runs seeded colored-branching experiments from a JSON config and writes
CSV/JSON artifacts.

    branching-fractals.py run <config> --seed S --out DIR [--trials T] [--threads K]
    branching-fractals.py validate <config>
    branching-fractals.py report <dir>
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from branching_fractals import __version__
from branching_fractals.errors import BranchingError, ConfigError, NumericGuardError
from branching_fractals.runner import ExperimentRunner, load_config, report, run_experiment

# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GUARD = 2
EXIT_FATAL = 3
EXIT_INTERRUPTED = 130


def setup_logging(log_file=None, verbose=False):
    """Configure logging once for the whole process."""
    handlers = [logging.StreamHandler()]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s: %(message)s',
        handlers=handlers,
        force=True
    )


def build_parser():
    parser = argparse.ArgumentParser(description="Colored branching process experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-trial detail")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trials", type=int, default=None, help="trial count (overrides the config)")
    run.add_argument("--threads", type=int, default=1, help="worker processes (0: one per physical core)")

    validate = commands.add_parser("validate", help="check a config without running it")
    validate.add_argument("config", help="JSON experiment config")

    show = commands.add_parser("report", help="print the JSON summary of a run")
    show.add_argument("dir", help="run output directory")
    return parser


def cmd_run(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(out_dir / ExperimentRunner.LOG_FILE, args.verbose)
    if args.seed is not None and args.seed < 0:
        raise ConfigError([("--seed", f"must be nonnegative, got {args.seed}")])
    if args.trials is not None and args.trials < 1:
        raise ConfigError([("--trials", f"must be >= 1, got {args.trials}")])
    config = load_config(args.config)
    threads = None if args.threads == 0 else args.threads
    run_experiment(config, out_dir, seed=args.seed, trials=args.trials, threads=threads)
    return EXIT_OK


def cmd_validate(args):
    setup_logging(verbose=args.verbose)
    config = load_config(args.config)
    logging.info(f"Config OK: '{config.experiment}' experiment over {config.colors} colors "
                 f"(hash {config.config_hash[:12]})")
    return EXIT_OK


def cmd_report(args):
    setup_logging(verbose=args.verbose)
    print(json.dumps(report(args.dir), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None):
    """Parse the command line and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "validate": cmd_validate, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ConfigError as e:
        logging.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except NumericGuardError as e:
        logging.error(f"Numeric guard tripped: {e}")
        return EXIT_GUARD
    except BranchingError as e:
        logging.error(f"Experiment failed: {e}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        logging.info("Experiment stopped by user")
        return EXIT_INTERRUPTED
    except Exception as e:
        logging.error(f"Fatal error: {e}")
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
