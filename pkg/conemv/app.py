import argparse
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from .config.settings import settings
from .routes.commands import COMMANDS, build_context
from .utils.exceptions import ConfigError, SolverError

logger = logging.getLogger("conemv")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def setup_logging(log_dir: Optional[str] = None, level: Optional[str] = None) -> None:
    """Rotating file log plus console output for the whole package"""
    config = settings.get_logging_config()
    log_path = Path(log_dir or config["log_dir"])
    log_path.mkdir(parents=True, exist_ok=True)
    level_value = getattr(logging, (level or config["level"]).upper(), logging.INFO)

    # Create formatters
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    # File handler for conemv.log
    file_handler = RotatingFileHandler(
        log_path / "conemv.log",
        maxBytes=config["max_bytes"],
        backupCount=config["backup_count"],
    )
    file_handler.setLevel(level_value)
    file_handler.setFormatter(formatter)

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING if level_value > logging.DEBUG else logging.DEBUG)
    console_handler.setFormatter(formatter)

    logger.setLevel(level_value)
    logger.addHandler(file_handler)
    logger.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conemv",
        description="Cone-constrained mean-variance portfolio selection in Lévy models",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, help="Run configuration JSON")
        sub.add_argument("--out", default=None, help="Output directory")
        sub.add_argument("--seed", type=int, default=None, help="Monte Carlo seed")
        sub.add_argument("--steps", type=int, default=None, help="Number of time steps")
        sub.add_argument("--paths", type=int, default=None, help="Number of Monte Carlo paths")
        sub.add_argument("--log-dir", default=None, help="Directory for conemv.log")
    return parser


def _flags(args: argparse.Namespace) -> dict:
    flags = {"seed": args.seed, "n_steps": args.steps, "mc_paths": args.paths}
    if args.seed is not None and args.seed < 0:
        raise ConfigError("seed must be nonnegative", field="--seed")
    for name in ("n_steps", "mc_paths"):
        if flags[name] is not None and flags[name] < 1:
            raise ConfigError("must be a positive integer", field=f"--{'steps' if name == 'n_steps' else 'paths'}")
    return flags


def run(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return the process exit code"""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        setup_logging(args.log_dir)
        ctx = build_context(args.config, args.command, _flags(args), args.out)
        COMMANDS[args.command](ctx)
        ctx.store.write_manifest(ctx.inputs, ctx.options)
        logger.info(f"'{args.command}' finished, artifacts in {ctx.store.out_dir}")
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_SOLVER
    except OSError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_IO
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_UNEXPECTED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
