"""Benchmark and ablation runs: fit every configuration on every task and rank them."""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hypertab.errors import DataError, HyperTabError
from hypertab.models import InferenceOptions
from hypertab.services.hpo import hpo_plan
from hypertab.services.hypernet import HyperNetwork
from hypertab.services.inference import fit_task, predict
from hypertab.services.metrics import auc, mean_rank, rmse
from hypertab.services.projection import DEFAULT_RANDOM_FEATURES
from hypertab.services.tabular import TabularTask

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ("task", "configuration", "seed", "metric", "value", "fit_seconds", "predict_seconds")
RANK_COLUMNS = ("configuration", "mean_rank", "n_cells")
SUITES = ("default", "ablation", "init", "hpo")
ABLATION_STAGES = ("Base", "+E", "+E+R", "+E+R+F")


@dataclass
class EvaluationRow:
    task: str
    configuration: str
    seed: int
    metric: str
    value: float
    fit_seconds: float
    predict_seconds: float


@dataclass
class EvaluationResult:
    """Result of an evaluation run."""
    success: bool
    rows: List[EvaluationRow] = field(default_factory=list)
    failed: int = 0
    error: Optional[str] = None
    duration_seconds: float = 0.0


def _ablation_options(preprocessing: str, stage: str, n_ens: int) -> InferenceOptions:
    ensemble = stage != "Base"
    return InferenceOptions(
        preprocessing=preprocessing,
        n_ens=n_ens if ensemble else 1,
        feature_bagging=ensemble,
        do_retrieval="+R" in stage,
        do_finetune="+F" in stage,
    )


def configuration_set(
    suite: str,
    n_hpo: int = 29,
    seed: int = 0,
    n_ens: Optional[int] = None,
    finetune_steps: Optional[int] = None,
) -> Dict[str, InferenceOptions]:
    """Named inference configurations of a suite, with optional global overrides."""
    if suite == "default":
        configs = {"default": InferenceOptions()}
    elif suite == "ablation":
        configs = {
            f"{prep}:{stage}": _ablation_options(prep, stage, n_ens or 8)
            for prep in ("R", "RX") for stage in ABLATION_STAGES
        }
    elif suite == "init":
        configs = {
            "hypernetwork": InferenceOptions(n_ens=1, do_retrieval=False, do_finetune=False),
            "hypernetwork+finetune": InferenceOptions(n_ens=1, do_retrieval=False, do_finetune=True),
            "random+finetune": InferenceOptions(n_ens=1, do_retrieval=False, do_finetune=True, init="random"),
        }
    elif suite == "hpo":
        plan = hpo_plan(n_hpo, seed)
        configs = {"default": InferenceOptions(**plan[0].model_dump())}
        for i, sample in enumerate(plan[1:], start=1):
            configs[f"hpo-{i:02d}"] = InferenceOptions(**sample.model_dump())
    else:
        raise DataError(f"Unknown evaluation suite: {suite}")

    update = {}
    if n_ens is not None and suite != "ablation":
        update["n_ens"] = n_ens
    if finetune_steps is not None:
        update["finetune_steps"] = finetune_steps
    return {name: opts.model_copy(update=update) for name, opts in configs.items()}


def evaluate_task(
    net: Optional[HyperNetwork],
    task: TabularTask,
    configuration: str,
    options: InferenceOptions,
    d_main: Optional[int] = None,
    random_features: int = DEFAULT_RANDOM_FEATURES,
) -> EvaluationRow:
    """Fit on train, score on test: AUC for classification, RMSE for regression."""
    test = task.split("test")
    if test.size == 0:
        raise DataError(f"Task {task.name} has an empty test split")

    started = time.monotonic()
    model = fit_task(net, task, options, d_main=d_main, random_features=random_features)
    fit_seconds = time.monotonic() - started

    started = time.monotonic()
    out = predict(model, task.X[test])
    predict_seconds = time.monotonic() - started

    if task.is_classification:
        metric, value = "auc", auc(out, task.y[test])
    else:
        metric, value = "rmse", rmse(out, task.y[test])
    return EvaluationRow(
        task=task.name, configuration=configuration, seed=options.seed, metric=metric,
        value=value, fit_seconds=fit_seconds, predict_seconds=predict_seconds,
    )


def run_evaluation(
    net: Optional[HyperNetwork],
    tasks: Sequence[TabularTask],
    configs: Dict[str, InferenceOptions],
    seeds: Sequence[int] = (0,),
    d_main: Optional[int] = None,
    random_features: int = DEFAULT_RANDOM_FEATURES,
    time_budget: Optional[float] = None,
) -> EvaluationResult:
    """Every (task, configuration, seed) cell; failing cells are logged and counted."""
    started = time.monotonic()
    result = EvaluationResult(success=False)
    if not tasks:
        raise DataError("No tasks to evaluate")

    for task in tasks:
        for name, options in configs.items():
            for seed in seeds:
                if time_budget is not None and time.monotonic() - started > time_budget:
                    logger.warning(f"Time budget of {time_budget}s exhausted; stopping evaluation")
                    result.error = "time budget exhausted"
                    result.duration_seconds = time.monotonic() - started
                    result.success = result.failed == 0
                    return result
                try:
                    row = evaluate_task(
                        net, task, name, options.model_copy(update={"seed": seed}), d_main, random_features,
                    )
                    result.rows.append(row)
                    logger.info(f"{task.name} [{name}, seed {seed}]: {row.metric}={row.value:.4f} ({row.fit_seconds:.2f}s fit)")
                except HyperTabError as e:
                    result.failed += 1
                    logger.error(f"Error evaluating {task.name} [{name}, seed {seed}]: {e}")

    result.success = result.failed == 0
    if result.failed:
        result.error = f"{result.failed} cell(s) failed"
    result.duration_seconds = time.monotonic() - started
    logger.info(
        f"Evaluation completed: {len(result.rows)} cells, {result.failed} failed "
        f"in {result.duration_seconds:.2f}s"
    )
    return result


def rank_configurations(rows: Sequence[EvaluationRow]) -> List[Tuple[str, float, int]]:
    """
    Mean rank per configuration over (task, seed) cells that every configuration completed.

    RMSE is negated so that rank 1 is always the best.
    """
    configs = sorted({r.configuration for r in rows})
    cells: Dict[Tuple[str, int], Dict[str, float]] = {}
    for r in rows:
        cells.setdefault((r.task, r.seed), {})[r.configuration] = r.value if r.metric == "auc" else -r.value
    complete = [cells[k] for k in sorted(cells) if len(cells[k]) == len(configs)]
    if not complete:
        return []
    table = np.array([[cell[c] for cell in complete] for c in configs])
    ranks = mean_rank(table, higher_is_better=True)
    return [(c, float(ranks[i]), len(complete)) for i, c in enumerate(configs)]


def write_results(rows: Sequence[EvaluationRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow([
                r.task, r.configuration, r.seed, r.metric, repr(r.value),
                f"{r.fit_seconds:.4f}", f"{r.predict_seconds:.4f}",
            ])


def write_ranks(ranks: Sequence[Tuple[str, float, int]], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RANK_COLUMNS)
        for name, rank, n in sorted(ranks, key=lambda r: (r[1], r[0])):
            writer.writerow([name, f"{rank:.4f}", n])
