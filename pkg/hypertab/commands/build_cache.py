"""build-cache: fit and store the embedding stage of every task in a directory."""

import argparse
import logging
from pathlib import Path

from hypertab.commands.common import add_run_arguments
from hypertab.models import BuildCacheRunConfig
from hypertab.services.importer import EmbeddingCache

logger = logging.getLogger(__name__)

NAME = "build-cache"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Build the task-embedding cache")
    add_run_arguments(parser)
    parser.add_argument("--tasks-dir", dest="tasks_dir")
    parser.add_argument("--preprocessing", choices=("R", "X", "C", "RX", "RC"))
    parser.add_argument("--gbdt-estimators", dest="gbdt_estimators", type=int)
    parser.add_argument("--gbdt-lr", dest="gbdt_lr", type=float)
    parser.add_argument("--gbdt-data-split", dest="gbdt_data_split", choices=("dynamic", "entire"))
    parser.set_defaults(handler=run, config_model=BuildCacheRunConfig)
    return parser


def run(config: BuildCacheRunConfig) -> int:
    cache = EmbeddingCache(Path(config.tasks_dir))
    result = cache.build_all(
        config.preprocessing, config.seed,
        gbdt_estimators=config.gbdt_estimators, gbdt_lr=config.gbdt_lr,
        data_split=config.gbdt_data_split,
    )
    print(f"built={result.built} reused={result.reused} failed={result.failed}")
    if result.error and not (result.built or result.reused):
        logger.error(result.error)
    return 0 if result.success else 1
