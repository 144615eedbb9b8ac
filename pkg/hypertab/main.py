"""HyperTab command-line entry point."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from hypertab import __version__
from hypertab.commands import COMMANDS
from hypertab.commands.common import write_manifest
from hypertab.config import get_settings, load_run_config
from hypertab.database import record_run
from hypertab.errors import HyperTabError

logger = logging.getLogger(__name__)

# Namespace entries that are not run-config fields
_CLI_ONLY = ("command", "handler", "config_model", "config", "log_level", "threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypertab",
        description="Hypernetwork-generated tabular models: meta-training, inference and dataset screening",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="key=value config file (a manifest works)")
    parser.add_argument("--log-level", dest="log_level", default=None, help="Overrides ILTM_LOG_LEVEL")
    parser.add_argument("--threads", type=int, default=None, help="Worker pool size (overrides ILTM_THREADS)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS:
        module.add_parser(subparsers)
    return parser


def configure_logging(level: Optional[str] = None) -> None:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        os.environ["ILTM_THREADS"] = str(args.threads)
        get_settings.cache_clear()
    configure_logging(args.log_level)

    overrides = {k: v for k, v in vars(args).items() if k not in _CLI_ONLY}
    try:
        config = load_run_config(args.config_model, args.config, overrides)
        write_manifest(args.command, config)
        with record_run(args.command, getattr(config, "out_dir", None)):
            return args.handler(config)
    except HyperTabError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception:
        logger.exception(f"Unexpected error in {args.command}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
