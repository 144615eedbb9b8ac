"""fit-predict: fit an ensemble on one task's train split and score its test split."""

import argparse
import csv
import logging
from pathlib import Path

import numpy as np

from hypertab.commands.common import add_bool_flag, add_run_arguments, load_net
from hypertab.errors import DataError
from hypertab.models import FitPredictRunConfig, InferenceOptions
from hypertab.services.container import write_container
from hypertab.services.inference import fit_task, predict, save_ensemble
from hypertab.services.metrics import auc, rmse
from hypertab.services.projection import DEFAULT_RANDOM_FEATURES
from hypertab.services.tabular import load_task

logger = logging.getLogger(__name__)

NAME = "fit-predict"
WEIGHTS_KIND = "weights"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Fit on a task and predict its test split")
    add_run_arguments(parser)
    parser.add_argument("--checkpoint", help="Meta-trained checkpoint (.iltm)")
    parser.add_argument("--tasks-dir", dest="tasks_dir")
    parser.add_argument("--task")
    parser.add_argument("--init", choices=("hypernetwork", "random"))
    parser.add_argument("--preprocessing", choices=("R", "X", "C", "RX", "RC"))
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--n-ens", dest="n_ens", type=int)
    add_bool_flag(parser, "feature-bagging", "feature_bagging", "Random feature subset per member")
    add_bool_flag(parser, "finetune", "do_finetune", "Fine-tune the generated weights")
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--finetune-steps", dest="finetune_steps", type=int)
    parser.add_argument("--finetune-lr", dest="finetune_lr", type=float)
    parser.add_argument("--finetune-data", dest="finetune_data", choices=("bootstrap", "entire"))
    parser.add_argument("--gbdt-data-split", dest="gbdt_data_split", choices=("dynamic", "entire"))
    add_bool_flag(parser, "gbdt-per-predictor", "gbdt_per_predictor", "Fit one GBDT per ensemble member")
    parser.add_argument("--gbdt-estimators", dest="gbdt_estimators", type=int)
    parser.add_argument("--gbdt-lr", dest="gbdt_lr", type=float)
    add_bool_flag(parser, "retrieval", "do_retrieval", "Mix retrieval logits into predictions")
    add_bool_flag(parser, "regression-retrieval", "regression_retrieval", "Retrieval for regression tasks")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--context-cap", dest="context_cap", type=int)
    parser.add_argument("--d-main", dest="d_main", type=int)
    parser.add_argument("--random-features", dest="random_features", type=int)
    parser.add_argument("--dump-weights", dest="dump_weights", action="store_true", default=None)
    parser.set_defaults(handler=run, config_model=FitPredictRunConfig)
    return parser


def inference_options(config: FitPredictRunConfig) -> InferenceOptions:
    return InferenceOptions(**config.model_dump(include=set(InferenceOptions.model_fields)))


def write_predictions(path: Path, task, rows: np.ndarray, out: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        if task.is_classification:
            labels = list(task.schema.target_vocabulary) or [str(k) for k in range(1, task.n_classes + 1)]
            writer.writerow(["row", "prediction"] + [f"p_{label}" for label in labels])
            for row, probs in zip(rows, out):
                writer.writerow([int(row), labels[int(np.argmax(probs))]] + [repr(float(p)) for p in probs])
        else:
            writer.writerow(["row", "prediction"])
            for row, value in zip(rows, out):
                writer.writerow([int(row), repr(float(value))])


def run(config: FitPredictRunConfig) -> int:
    out_dir = Path(config.out_dir)
    net, echo = load_net(config.checkpoint)
    task = load_task(Path(config.tasks_dir), config.task, seed=config.seed)
    test = task.split("test")
    if test.size == 0:
        raise DataError(f"Task {task.name} has an empty test split")

    random_features = config.random_features or echo.get("random_features") or DEFAULT_RANDOM_FEATURES
    options = inference_options(config)
    d_main = config.d_main
    if net is not None and d_main not in (None, net.config.d_main):
        logger.warning(f"Ignoring d_main={d_main}; the checkpoint generates d_main={net.config.d_main}")
        d_main = None
    model = fit_task(net, task, options, d_main=d_main, random_features=int(random_features))
    out = predict(model, task.X[test])

    if task.is_classification:
        metric, value = "auc", auc(out, task.y[test])
    else:
        metric, value = "rmse", rmse(out, task.y[test])

    write_predictions(out_dir / "predictions.csv", task, test, out)
    line = f"task={task.name} {metric}={value:.6f} alpha={options.retrieval_alpha} tau={options.tau} n_ens={model.n_ens}"
    (out_dir / "metrics.txt").write_text(line + "\n")
    save_ensemble(model, out_dir / "ensemble.iltm")

    if config.dump_weights:
        tensors = {f"m{i}.theta": m.theta.flat() for i, m in enumerate(model.members)}
        write_container(out_dir / "weights.iltm", WEIGHTS_KIND, {"task": task.name, "n_ens": model.n_ens}, tensors)
        logger.info(f"Exported flat weights of {model.n_ens} member(s)")

    print(line)
    return 0
