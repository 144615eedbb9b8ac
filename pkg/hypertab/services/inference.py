"""
Fitting the hypernetwork-generated model to a new task, and prediction.

Per ensemble member: draw a feature-bag mask, fit the embedding stage,
fit the projection tail on a generation batch, generate the main network,
optionally fine-tune it, then build the retrieval context. Members are
averaged in probability space (regression: in output space).
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from hypertab.errors import ConfigError, DataError
from hypertab.models import InferenceOptions
from hypertab.scheduler import run_ordered
from hypertab.services.autodiff import Tape, grad
from hypertab.services.container import read_container, write_container
from hypertab.services.gbdt import GbdtModel, dynamic_fit_split, fit_gbdt, flavor_config
from hypertab.services.hypernet import (
    HyperNetwork,
    MainNetParams,
    combined_logits,
    forward_main,
    forward_on_tape,
    generate_weights,
    generate_weights_regression,
    predict_proba,
    random_main_params,
    retrieval_logits,
    retrieval_regression,
    theta_nodes,
)
from hypertab.services.optim import ADAM, Optimizer
from hypertab.services.preprocess import PsiVariant, build_psi, fit_psi, psi_from_state, psi_to_state
from hypertab.services.projection import (
    DEFAULT_RANDOM_FEATURES,
    ProjectionParams,
    apply_projection,
    fit_projection,
    projection_from_state,
    projection_to_state,
)
from hypertab.services.tabular import CLASSIFICATION, REGRESSION, TabularTask, one_hot_labels

logger = logging.getLogger(__name__)

ENSEMBLE_KIND = "ensemble"
FINETUNE_BATCH = 2048


@dataclass(frozen=True)
class FineTuneConfig:
    lr: float = 1e-4
    max_steps: int = 1024
    dropout: float = 0.0
    patience: int = 16
    data_mode: str = "entire"
    batch_size: int = FINETUNE_BATCH
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.lr < 0 or self.max_steps < 0 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError(f"Invalid fine-tuning config: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"Dropout must lie in [0, 1), got {self.dropout}")
        if self.data_mode not in ("entire", "bootstrap"):
            raise ConfigError(f"Unknown fine-tuning data mode: {self.data_mode}")

    @classmethod
    def from_options(cls, options: InferenceOptions) -> "FineTuneConfig":
        return cls(
            lr=options.finetune_lr,
            max_steps=options.finetune_steps,
            dropout=options.dropout,
            patience=options.finetune_patience,
            data_mode=options.finetune_data,
            holdout_fraction=options.holdout_fraction,
        )


@dataclass
class FineTuneReport:
    steps: int = 0
    best_step: int = 0
    initial_loss: float = float("nan")
    best_loss: float = float("nan")
    stopped_early: bool = False


@dataclass(frozen=True)
class FittedPredictor:
    """One ensemble member; immutable after fit."""
    psi: PsiVariant
    projection: ProjectionParams
    theta: MainNetParams
    feature_mask: np.ndarray
    seed: int
    context_H: Optional[np.ndarray] = None
    context_Y: Optional[np.ndarray] = None
    target_mean: float = 0.0
    target_scale: float = 1.0

    @property
    def has_context(self) -> bool:
        return self.context_H is not None and self.context_H.shape[0] > 0


@dataclass
class EnsembleModel:
    members: List[FittedPredictor]
    task_kind: str
    n_classes: int
    n_features: int
    alpha: float = 0.5
    tau: float = 2.0
    regression_retrieval: bool = False
    reports: List[FineTuneReport] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.members:
            raise ConfigError("An ensemble needs at least one member")
        widths = {m.theta.n_outputs for m in self.members}
        if len(widths) != 1:
            raise DataError(f"Ensemble members disagree on the output width: {sorted(widths)}")

    @property
    def n_ens(self) -> int:
        return len(self.members)


# --- Small helpers ---

def standardize_targets(y: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """(y - mean) / scale with scale falling back to 1 for a constant target."""
    y = np.asarray(y, dtype=np.float64)
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if not scale > 0:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def destandardize(pred: np.ndarray, mean: float, scale: float) -> np.ndarray:
    return np.asarray(pred, dtype=np.float64) * scale + mean


def feature_bag_mask(n_features: int, member: int, seed: int, fraction: float, enabled: bool) -> np.ndarray:
    """Sorted raw column indices for one member, reproducible from (seed, member)."""
    if not enabled or n_features == 1:
        return np.arange(n_features)
    rng = np.random.default_rng([seed, member, 1])
    k = min(n_features, max(1, int(round(fraction * n_features))))
    return np.sort(rng.choice(n_features, size=k, replace=False))


def adapt_for_regression(net: HyperNetwork, X_gen: np.ndarray, y_gen: np.ndarray) -> Tuple[MainNetParams, float, float]:
    """Single-output theta conditioned on standardized targets, plus the (mean, scale) to undo it."""
    y_std, mean, scale = standardize_targets(y_gen)
    return generate_weights_regression(net, X_gen, y_std), mean, scale


# --- Fine-tuning ---

def _member_loss(tape: Tape, theta_nodes_, X: np.ndarray, targets: np.ndarray, task_kind: str, masks=None):
    _, out = forward_on_tape(tape, theta_nodes_, tape.constant(X), masks)
    if task_kind == REGRESSION:
        return tape.mse_loss(out, targets)
    return tape.ce_loss(out, targets)


def _holdout_loss(theta: MainNetParams, X: np.ndarray, targets: np.ndarray, task_kind: str) -> float:
    tape = Tape()
    return float(_member_loss(tape, theta_nodes(tape, theta, trainable=False), X, targets, task_kind).value)


def fine_tune(
    theta: MainNetParams,
    X_fit: np.ndarray,
    T_fit: np.ndarray,
    X_hold: np.ndarray,
    T_hold: np.ndarray,
    cfg: FineTuneConfig,
    task_kind: str = CLASSIFICATION,
    seed: int = 0,
) -> Tuple[MainNetParams, FineTuneReport]:
    """
    Adam on theta alone; the hypernetwork is not involved.

    Targets are one-hot rows (classification) or standardized values
    (regression). The held-out loss is checked after every step and the
    best theta is kept; ties keep the earlier one.
    """
    rng = np.random.default_rng([seed, 2])
    report = FineTuneReport()
    best = theta
    best_loss = _holdout_loss(theta, X_hold, T_hold, task_kind)
    report.initial_loss = report.best_loss = best_loss

    optimizer = Optimizer(kind=ADAM, lr=cfg.lr)
    params = theta.as_dict()
    n_fit = X_fit.shape[0]
    d = theta.W1.shape[0]
    stale = 0
    for step in range(1, cfg.max_steps + 1):
        batch = rng.choice(n_fit, size=min(cfg.batch_size, n_fit), replace=False)
        masks = None
        if cfg.dropout > 0:
            keep = 1.0 - cfg.dropout
            masks = tuple((rng.random((batch.size, d)) < keep) / keep for _ in range(2))

        tape = Tape()
        nodes = theta_nodes(tape, MainNetParams.from_dict(params), trainable=True)
        loss = _member_loss(tape, nodes, X_fit[batch], T_fit[batch], task_kind, masks)
        params = optimizer.step(params, grad(tape, loss))
        report.steps = step

        candidate = MainNetParams.from_dict(params)
        hold = _holdout_loss(candidate, X_hold, T_hold, task_kind)
        if hold < best_loss:
            best, best_loss, stale = candidate, hold, 0
            report.best_step = step
        else:
            stale += 1
            if stale >= cfg.patience:
                report.stopped_early = True
                break

    report.best_loss = best_loss
    logger.debug(
        f"Fine-tuned {report.steps} steps; held-out loss {report.initial_loss:.5f} -> {best_loss:.5f} "
        f"(best step {report.best_step})"
    )
    return best.check_finite(), report


# --- Fitting ---

def _shared_gbdt(task: TabularTask, rows: np.ndarray, options: InferenceOptions) -> Optional[GbdtModel]:
    if options.preprocessing == "R" or options.gbdt_per_predictor:
        return None
    config = flavor_config(options.preprocessing[-1], max_rounds=options.gbdt_estimators, learning_rate=options.gbdt_lr)
    return fit_gbdt(task.X[rows], task.y[rows], task.n_classes, config, seed=options.seed)


def _fit_member(
    net: Optional[HyperNetwork],
    task: TabularTask,
    options: InferenceOptions,
    member: int,
    fit_rows: np.ndarray,
    pool: np.ndarray,
    shared_gbdt: Optional[GbdtModel],
    d_main: int,
    random_features: int,
) -> Tuple[FittedPredictor, FineTuneReport]:
    seed = options.seed
    rng = np.random.default_rng([seed, member])
    train = task.split("train")
    regression = not task.is_classification

    mask = feature_bag_mask(task.n_features, member, seed, options.feature_fraction, options.feature_bagging)
    gbdt_config = None
    if options.preprocessing != "R":
        gbdt_config = flavor_config(options.preprocessing[-1], max_rounds=options.gbdt_estimators, learning_rate=options.gbdt_lr)
    psi = fit_psi(
        options.preprocessing, task.X[fit_rows], task.y[fit_rows], task.n_classes, task.schema,
        gbdt_config=gbdt_config, seed=seed + member,
        robust_columns=mask,
        gbdt_columns=mask if options.gbdt_per_predictor else None,
        gbdt=shared_gbdt,
    )
    psi_train = build_psi(psi, task.X[train])

    gen_pos = np.sort(rng.permutation(pool)[:min(options.batch_size, pool.size)])
    if gen_pos.size < 2:
        raise DataError(f"Task {task.name}: at least two training rows are needed to fit the projection")
    projection = fit_projection(psi_train[gen_pos], r=random_features, d_main=d_main, seed=int(rng.integers(2 ** 31)))
    X_train = apply_projection(projection, psi_train)
    X_gen = X_train[gen_pos]

    target_mean, target_scale = 0.0, 1.0
    if regression:
        y_train = task.y[train]
        if options.init == "hypernetwork":
            theta, target_mean, target_scale = adapt_for_regression(net, X_gen, y_train[gen_pos])
        else:
            _, target_mean, target_scale = standardize_targets(y_train[gen_pos])
            theta = random_main_params(d_main, 1, seed=seed + member)
        targets = ((y_train - target_mean) / target_scale)[:, None]
    else:
        targets = one_hot_labels(task.y[train], task.n_classes)
        if options.init == "hypernetwork":
            theta = generate_weights(net, X_gen, targets[gen_pos])
        else:
            theta = random_main_params(d_main, task.n_classes, seed=seed + member)

    report = FineTuneReport()
    if options.do_finetune and options.finetune_steps > 0:
        theta, report = _fine_tune_member(theta, X_train, targets, options, rng, task, member)

    context_H = context_Y = None
    alpha = options.retrieval_alpha
    if alpha > 0 and (task.is_classification or options.regression_retrieval):
        n_ctx = min(options.context_cap, train.size)
        ctx = np.sort(rng.choice(train.size, size=n_ctx, replace=False))
        context_H, _ = forward_main(theta, X_train[ctx])
        context_Y = targets[ctx]

    predictor = FittedPredictor(
        psi=psi, projection=projection, theta=theta, feature_mask=mask, seed=seed + member,
        context_H=context_H, context_Y=context_Y, target_mean=target_mean, target_scale=target_scale,
    )
    return predictor, report


def _fine_tune_member(theta, X_train, targets, options, rng, task, member) -> Tuple[MainNetParams, FineTuneReport]:
    n = X_train.shape[0]
    n_hold = int(round(options.holdout_fraction * n))
    if n < 2 or n_hold < 1 or n - n_hold < 1:
        logger.warning(f"Task {task.name}: too few training rows to fine-tune member {member}")
        return theta, FineTuneReport()
    perm = rng.permutation(n)
    hold, fit = perm[:n_hold], perm[n_hold:]
    if options.finetune_data == "bootstrap":
        fit = rng.choice(fit, size=fit.size, replace=True)
    cfg = FineTuneConfig.from_options(options)
    return fine_tune(
        theta, X_train[fit], targets[fit], X_train[hold], targets[hold], cfg,
        task_kind=CLASSIFICATION if task.is_classification else REGRESSION,
        seed=options.seed + member,
    )


def fit_task(
    net: Optional[HyperNetwork],
    task: TabularTask,
    options: Optional[InferenceOptions] = None,
    d_main: Optional[int] = None,
    random_features: int = DEFAULT_RANDOM_FEATURES,
    workers: Optional[int] = None,
) -> EnsembleModel:
    """Fit an ensemble of n_ens generated (and optionally fine-tuned) main networks."""
    options = options or InferenceOptions()
    if options.init == "hypernetwork" and net is None:
        raise ConfigError("A hypernetwork checkpoint is required unless init=random")
    d_main = d_main or (net.config.d_main if net is not None else None)
    if d_main is None:
        raise ConfigError("d_main must be given when no hypernetwork is loaded")
    if net is not None and task.is_classification and task.n_classes > net.config.k_max:
        raise ConfigError(f"Task {task.name} has {task.n_classes} classes; the hypernetwork supports {net.config.k_max}")

    started = time.monotonic()
    train = task.split("train")
    if train.size == 0:
        raise DataError(f"Task {task.name} has an empty train split")
    split = dynamic_fit_split(train.size, options.seed, mode=options.gbdt_data_split)
    fit_rows = train[split.gbdt_fit]
    shared = _shared_gbdt(task, fit_rows, options)

    results = run_ordered(
        lambda i: _fit_member(net, task, options, i, fit_rows, split.hypernet_pool, shared, d_main, random_features),
        list(range(options.n_ens)),
        workers,
    )
    model = EnsembleModel(
        members=[p for p, _ in results],
        task_kind=CLASSIFICATION if task.is_classification else REGRESSION,
        n_classes=task.n_classes,
        n_features=task.n_features,
        alpha=options.retrieval_alpha,
        tau=options.tau,
        regression_retrieval=options.regression_retrieval,
        reports=[r for _, r in results],
    )
    logger.info(f"Fitted {model.n_ens} member(s) on {task.name} in {time.monotonic() - started:.2f}s")
    return model


# --- Prediction ---

def predict_member(model: EnsembleModel, member: FittedPredictor, X: np.ndarray) -> np.ndarray:
    Z = apply_projection(member.projection, build_psi(member.psi, X))
    H, logits = forward_main(member.theta, Z)
    alpha = model.alpha
    if model.task_kind == REGRESSION:
        out = logits[:, 0]
        if model.regression_retrieval and alpha > 0 and member.has_context:
            ret = retrieval_regression(H, member.context_H, member.context_Y)[:, 0]
            out = (1.0 - alpha) * out + alpha * ret
        return destandardize(out, member.target_mean, member.target_scale)
    if alpha > 0 and member.has_context:
        logits = combined_logits(logits, retrieval_logits(H, member.context_H, member.context_Y, model.tau), alpha)
    return predict_proba(logits)


def predict(model: EnsembleModel, X: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
    """Class probabilities (N x K) or real predictions (N,)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataError(f"predict: model was fitted on {model.n_features} features, got shape {X.shape}")
    outputs = run_ordered(lambda m: predict_member(model, m, X), model.members, workers)
    reference = outputs[0]
    # Averaging offsets from the first member keeps identical members exact.
    return reference + np.mean(np.stack([o - reference for o in outputs]), axis=0)


# --- Ensemble files ---

def save_ensemble(model: EnsembleModel, path: Path) -> None:
    tensors: Dict[str, np.ndarray] = {}
    members = []
    for i, m in enumerate(model.members):
        prefix = f"m{i}"
        psi_meta, psi_tensors = psi_to_state(m.psi, prefix=f"{prefix}.psi")
        proj_meta, proj_tensors = projection_to_state(m.projection, prefix=f"{prefix}.proj")
        tensors.update(psi_tensors)
        tensors.update(proj_tensors)
        for name, value in m.theta.as_dict().items():
            tensors[f"{prefix}.theta.{name}"] = value
        tensors[f"{prefix}.mask"] = m.feature_mask.astype(np.int64)
        if m.context_H is not None:
            tensors[f"{prefix}.ctx.H"] = m.context_H
            tensors[f"{prefix}.ctx.Y"] = m.context_Y
        members.append({
            "psi": psi_meta, "proj": proj_meta, "seed": m.seed,
            "target_mean": m.target_mean, "target_scale": m.target_scale,
        })
    metadata = {
        "task_kind": model.task_kind,
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "alpha": model.alpha,
        "tau": model.tau,
        "regression_retrieval": model.regression_retrieval,
        "members": members,
    }
    write_container(path, ENSEMBLE_KIND, metadata, tensors)


def load_ensemble(path: Path) -> EnsembleModel:
    _, metadata, tensors = read_container(path, expected_kind=ENSEMBLE_KIND)
    members = []
    for i, m in enumerate(metadata["members"]):
        prefix = f"m{i}"
        theta = MainNetParams.from_dict({n: tensors[f"{prefix}.theta.{n}"] for n in MainNetParams.NAMES})
        members.append(FittedPredictor(
            psi=psi_from_state(m["psi"], tensors, prefix=f"{prefix}.psi"),
            projection=projection_from_state(m["proj"], tensors, prefix=f"{prefix}.proj"),
            theta=theta,
            feature_mask=tensors[f"{prefix}.mask"],
            seed=m["seed"],
            context_H=tensors.get(f"{prefix}.ctx.H"),
            context_Y=tensors.get(f"{prefix}.ctx.Y"),
            target_mean=m["target_mean"],
            target_scale=m["target_scale"],
        ))
    return EnsembleModel(
        members=members,
        task_kind=metadata["task_kind"],
        n_classes=metadata["n_classes"],
        n_features=metadata["n_features"],
        alpha=metadata["alpha"],
        tau=metadata["tau"],
        regression_retrieval=metadata["regression_retrieval"],
    )
