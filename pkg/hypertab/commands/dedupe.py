"""dedupe: screen candidate pretraining tasks against the evaluation panel."""

import argparse
import logging
from pathlib import Path

from hypertab.commands.common import add_run_arguments
from hypertab.errors import DataError
from hypertab.models import DedupeRunConfig
from hypertab.services.dedupe import load_handles, read_eval_list, run_pipeline, summarize, write_discard_file

logger = logging.getLogger(__name__)

NAME = "dedupe"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Write the discard file for a candidate corpus")
    add_run_arguments(parser)
    parser.add_argument("--candidates-dir", dest="candidates_dir")
    parser.add_argument("--evals-dir", dest="evals_dir")
    parser.add_argument("--eval-list", dest="eval_list", help="Eval task names and did=<id> lines")
    parser.add_argument("--threshold", type=float, help="Name-similarity threshold")
    parser.add_argument("--leak-samples", dest="leak_samples", type=int)
    parser.set_defaults(handler=run, config_model=DedupeRunConfig)
    return parser


def run(config: DedupeRunConfig) -> int:
    names, explicit_ids = None, []
    if config.eval_list is not None:
        names, explicit_ids = read_eval_list(Path(config.eval_list))

    evals, unreadable = load_handles(Path(config.evals_dir), names)
    if unreadable:
        raise DataError(f"Eval task {unreadable[0].name} is unreadable: {unreadable[0].evidence}")
    candidates, failed = load_handles(Path(config.candidates_dir))

    records = run_pipeline(candidates, evals, config.dedupe_config(), explicit_ids)
    records = sorted(records + failed, key=lambda r: r.name)
    write_discard_file(records, Path(config.out_dir) / "discard.csv")

    for key, count in summarize(records).items():
        print(f"{key}\t{count}")
    return 0
