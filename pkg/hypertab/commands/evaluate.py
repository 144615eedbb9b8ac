"""evaluate: run a configuration suite over a task directory and rank the configurations."""

import argparse
import logging
from pathlib import Path

from hypertab.commands.common import add_run_arguments, load_all_tasks, load_net
from hypertab.models import EvaluateRunConfig
from hypertab.services.evaluation import (
    SUITES,
    configuration_set,
    rank_configurations,
    run_evaluation,
    write_ranks,
    write_results,
)
from hypertab.services.projection import DEFAULT_RANDOM_FEATURES

logger = logging.getLogger(__name__)

NAME = "evaluate"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Benchmark or ablation run over a task directory")
    add_run_arguments(parser)
    parser.add_argument("--checkpoint")
    parser.add_argument("--tasks-dir", dest="tasks_dir")
    parser.add_argument("--suite", choices=SUITES)
    parser.add_argument("--seeds", help="Comma-separated seeds, e.g. 0,1,2")
    parser.add_argument("--n-hpo", dest="n_hpo", type=int, help="Random configurations in the hpo suite")
    parser.add_argument("--n-ens", dest="n_ens", type=int)
    parser.add_argument("--finetune-steps", dest="finetune_steps", type=int)
    parser.add_argument("--time-budget", dest="time_budget", type=float, help="Seconds")
    parser.add_argument("--d-main", dest="d_main", type=int)
    parser.add_argument("--random-features", dest="random_features", type=int)
    parser.set_defaults(handler=run, config_model=EvaluateRunConfig)
    return parser


def run(config: EvaluateRunConfig) -> int:
    out_dir = Path(config.out_dir)
    net, echo = load_net(config.checkpoint)
    tasks = load_all_tasks(config.tasks_dir, seed=config.seed)
    configs = configuration_set(
        config.suite, n_hpo=config.n_hpo, seed=config.seed,
        n_ens=config.n_ens, finetune_steps=config.finetune_steps,
    )
    if net is None:
        configs = {name: opts.model_copy(update={"init": "random"}) for name, opts in configs.items()}
        logger.warning("No checkpoint given; every configuration uses random initialization")
    random_features = config.random_features or echo.get("random_features") or DEFAULT_RANDOM_FEATURES

    result = run_evaluation(
        net, tasks, configs, seeds=config.seeds,
        d_main=config.d_main if net is None else None,
        random_features=int(random_features), time_budget=config.time_budget,
    )
    write_results(result.rows, out_dir / "results.csv")
    ranks = rank_configurations(result.rows)
    write_ranks(ranks, out_dir / "ranks.csv")

    for name, rank, n in sorted(ranks, key=lambda r: (r[1], r[0])):
        print(f"{name}\t{rank:.3f}\t({n} cells)")
    return 0 if result.success else 1
