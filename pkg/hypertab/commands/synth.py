"""synth: write a synthetic task suite."""

import argparse
import logging
from pathlib import Path

from hypertab.commands.common import add_run_arguments
from hypertab.models import SynthRunConfig
from hypertab.services.synthetic import make_classification_suite, make_regression_suite, write_suite

logger = logging.getLogger(__name__)

NAME = "synth"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Generate synthetic tasks")
    add_run_arguments(parser)
    parser.add_argument("--kind", choices=("classification", "regression"))
    parser.add_argument("--n-tasks", dest="n_tasks", type=int)
    parser.add_argument("--prefix", help="Task name prefix (default: cls or reg)")
    parser.set_defaults(handler=run, config_model=SynthRunConfig)
    return parser


def run(config: SynthRunConfig) -> int:
    extra = {"prefix": config.prefix} if config.prefix else {}
    if config.kind == "classification":
        tasks = make_classification_suite(config.n_tasks, seed=config.seed, **extra)
    else:
        tasks = make_regression_suite(config.n_tasks, seed=config.seed, **extra)
    write_suite(tasks, Path(config.out_dir))
    print(f"{len(tasks)} {config.kind} tasks in {config.out_dir}")
    return 0
