"""hpo-sample: write the default configuration and N random draws of the search space."""

import argparse
import csv
import logging
from pathlib import Path

from hypertab.commands.common import add_run_arguments
from hypertab.models import HpoSampleRunConfig, HpSample
from hypertab.services.hpo import hpo_plan

logger = logging.getLogger(__name__)

NAME = "hpo-sample"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Sample inference hyperparameters")
    add_run_arguments(parser)
    parser.add_argument("--n-samples", dest="n_samples", type=int, help="Random draws after the default row")
    parser.set_defaults(handler=run, config_model=HpoSampleRunConfig)
    return parser


def run(config: HpoSampleRunConfig) -> int:
    plan = hpo_plan(config.n_samples, seed=config.seed)
    columns = list(HpSample.model_fields)
    path = Path(config.out_dir) / "hpo.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index"] + columns)
        for i, sample in enumerate(plan):
            values = sample.model_dump()
            writer.writerow([i] + ["" if values[c] is None else values[c] for c in columns])
    logger.info(f"Wrote {len(plan)} configurations to {path}")
    print(path)
    return 0
