"""meta-train: fit the hypernetwork over a task directory."""

import argparse
import logging
from pathlib import Path

from hypertab.commands.common import add_bool_flag, add_run_arguments, load_all_tasks
from hypertab.models import MetaTrainRunConfig
from hypertab.services.hypernet import HyperNetConfig
from hypertab.services.importer import load_collection_embeddings
from hypertab.services.meta_train import MetaTrainConfig, MetaTrainer
from hypertab.services.tabular import MetaCollection, validate_disjoint_roles

logger = logging.getLogger(__name__)

NAME = "meta-train"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Meta-train the hypernetwork")
    add_run_arguments(parser)
    parser.add_argument("--tasks-dir", dest="tasks_dir")
    parser.add_argument("--val-dir", dest="val_dir", help="Meta-validation tasks (default: last n-val-tasks of tasks-dir)")
    parser.add_argument("--n-val-tasks", dest="n_val_tasks", type=int)
    parser.add_argument("--build-cache", dest="build_cache", action="store_true", default=None)
    parser.add_argument("--accumulation", type=int, help="Tasks per meta-step (A)")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--optimizer", choices=("adam", "sgd"))
    parser.add_argument("--max-steps", dest="max_steps", type=int)
    parser.add_argument("--batch-gen", dest="batch_gen", type=int)
    parser.add_argument("--batch-grad", dest="batch_grad", type=int)
    parser.add_argument("--val-period", dest="val_period", type=int)
    add_bool_flag(parser, "retrieval", "retrieval", "Mix retrieval logits into the meta-loss")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--dtype", choices=("float64", "float32"))
    parser.add_argument("--d-main", dest="d_main", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--k-max", dest="k_max", type=int)
    parser.add_argument("--block-depth", dest="block_depth", type=int)
    parser.add_argument("--random-features", dest="random_features", type=int)
    parser.add_argument("--preprocessing", choices=("R", "X", "C", "RX", "RC"))
    parser.add_argument("--gbdt-estimators", dest="gbdt_estimators", type=int)
    parser.add_argument("--gbdt-lr", dest="gbdt_lr", type=float)
    parser.add_argument("--gbdt-data-split", dest="gbdt_data_split", choices=("dynamic", "entire"))
    parser.add_argument("--time-budget", dest="time_budget", type=float, help="Seconds")
    parser.set_defaults(handler=run, config_model=MetaTrainRunConfig)
    return parser


def _collection(tasks, directory: str, role: str, config: MetaTrainRunConfig) -> MetaCollection:
    embeddings = load_collection_embeddings(
        tasks, Path(directory), config.preprocessing, config.seed,
        gbdt_estimators=config.gbdt_estimators, gbdt_lr=config.gbdt_lr,
        data_split=config.gbdt_data_split, build=config.build_cache,
    )
    return MetaCollection(tasks=tasks, role=role, embeddings=embeddings)


def run(config: MetaTrainRunConfig) -> int:
    tasks = load_all_tasks(config.tasks_dir, seed=config.seed)
    if config.val_dir is not None:
        train_tasks = tasks
        val_tasks = load_all_tasks(config.val_dir, seed=config.seed)
        val_dir = config.val_dir
    else:
        n_val = min(config.n_val_tasks, len(tasks) - 1)
        train_tasks, val_tasks = tasks[:len(tasks) - n_val], tasks[len(tasks) - n_val:]
        val_dir = config.tasks_dir

    train = _collection(train_tasks, config.tasks_dir, "meta-train", config)
    val = _collection(val_tasks, val_dir, "meta-val", config) if val_tasks else None
    if val is not None:
        validate_disjoint_roles(train, val)
    logger.info(f"Meta-train tasks: {len(train)}, meta-val tasks: {len(val) if val is not None else 0}")

    trainer = MetaTrainer(
        config=MetaTrainConfig(
            accumulation=config.accumulation, lr=config.lr, max_steps=config.max_steps,
            batch_gen=config.batch_gen, batch_grad=config.batch_grad, optimizer=config.optimizer,
            seed=config.seed, val_period=config.val_period, retrieval=config.retrieval,
            alpha=config.alpha, tau=config.tau, random_features=config.random_features,
            dtype=config.dtype, time_budget=config.time_budget,
        ),
        hyper_config=HyperNetConfig(
            d_main=config.d_main, hidden=config.hidden, k_max=config.k_max, block_depth=config.block_depth,
        ),
        train=train,
        out_dir=Path(config.out_dir),
        val=val,
    )
    result = trainer.run()
    print(result.checkpoint_path)
    return 0
