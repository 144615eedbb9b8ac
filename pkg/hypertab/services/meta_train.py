"""
Meta-training of the hypernetwork over a task collection.

Each step draws A tasks, generates a main network from a generation subset
of each, scores it on a disjoint gradient subset and applies one optimizer
update with the summed gradients. Meta-validation scores periodic
checkpoints by few-shot AUC and the best one is kept.
"""

import csv
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hypertab.errors import ConfigError, DataError, UndefinedMetricError
from hypertab.scheduler import run_ordered
from hypertab.services.autodiff import Tape, grad
from hypertab.services.container import read_container, write_container
from hypertab.services.hypernet import (
    HyperNetConfig,
    HyperNetwork,
    combined_logits,
    forward_main,
    forward_on_tape,
    generate_on_tape,
    generate_weights,
    hypernet_from_state,
    hypernet_to_state,
    phi_nodes,
    predict_proba,
    retrieval_logits,
    retrieval_on_tape,
)
from hypertab.services.importer import TaskEmbedding
from hypertab.services.metrics import auc
from hypertab.services.optim import ADAM, Optimizer
from hypertab.services.preprocess import build_psi
from hypertab.services.projection import apply_projection, fit_projection
from hypertab.services.tabular import MetaCollection, TabularTask, one_hot_labels

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "checkpoint"
CHECKPOINT_VERSION = 1
META_VAL_COLUMNS = ("step", "score", "wall_time")


@dataclass(frozen=True)
class MetaTrainConfig:
    """Knobs of the meta-training loop."""
    accumulation: int = 40
    lr: float = 1e-4
    max_steps: int = 1000
    batch_gen: int = 2048
    batch_grad: int = 2048
    optimizer: str = ADAM
    seed: int = 0
    val_period: int = 100
    retrieval: bool = True
    alpha: float = 0.5
    tau: float = 2.0
    random_features: int = 32768
    dtype: str = "float64"
    time_budget: Optional[float] = None
    workers: Optional[int] = None

    def __post_init__(self):
        for name in ("accumulation", "max_steps", "batch_gen", "batch_grad", "val_period", "random_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"Learning rate must be >= 0, got {self.lr}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"Unsupported dtype: {self.dtype}")

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.retrieval else 0.0

    def echo(self) -> Dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "workers"}


@dataclass
class DrawResult:
    """Loss and phi-gradient of one accumulation draw."""
    task: str
    loss: float
    grads: Dict[str, np.ndarray]
    gen_rows: np.ndarray
    grad_rows: np.ndarray


@dataclass
class MetaStepReport:
    step: int
    loss: float
    accumulation: int
    n_used: int
    n_skipped: int


@dataclass
class Checkpoint:
    """Hypernetwork snapshot with optimizer state and meta-validation history."""
    net: HyperNetwork
    optimizer: Optimizer
    step: int
    history: List[Tuple[int, float]] = field(default_factory=list)
    config: Dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


@dataclass
class MetaTrainResult:
    """Result of a meta-training run."""
    success: bool
    steps: int = 0
    best_step: Optional[int] = None
    best_score: Optional[float] = None
    final_loss: Optional[float] = None
    checkpoint_path: Optional[str] = None
    error: Optional[str] = None
    duration_seconds: float = 0.0


# --- Sampling ---

def sample_subsets(pool: np.ndarray, batch_gen: int, batch_grad: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Disjoint generation and gradient subsets of a pool, drawn without replacement.

    The generation subset takes at most half the pool so the gradient subset
    is never empty when the pool has two or more rows.
    """
    perm = rng.permutation(np.asarray(pool, dtype=np.int64))
    n_gen = min(batch_gen, max(1, perm.size // 2))
    return perm[:n_gen], perm[n_gen:n_gen + batch_grad]


def _draw_rng(seed: int, step: int, draw: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, draw])


def _resolve_embedding(collection: MetaCollection, task: TabularTask) -> TaskEmbedding:
    embedding = collection.embeddings.get(task.name)
    if embedding is None:
        raise DataError(f"Task {task.name} has no cached embedding; run build-cache first")
    return embedding


# --- One draw ---

def draw_gradient(
    net: HyperNetwork,
    collection: MetaCollection,
    cfg: MetaTrainConfig,
    step: int,
    draw: int,
) -> Optional[DrawResult]:
    """
    Loss and gradient for accumulation draw `draw` of `step`.

    Returns None (with a warning) for tasks that cannot produce a training
    signal: a single class, a regression target or too few pool rows.
    """
    rng = _draw_rng(cfg.seed, step, draw)
    task = collection.tasks[int(rng.integers(len(collection)))]
    if not task.is_classification or task.n_classes < 2:
        logger.warning(f"Skipping task {task.name}: meta-training needs at least two classes")
        return None

    embedding = _resolve_embedding(collection, task)
    gen_pos, grad_pos = sample_subsets(embedding.fit_split.hypernet_pool, cfg.batch_gen, cfg.batch_grad, rng)
    if gen_pos.size < 2 or grad_pos.size < 1:
        logger.warning(f"Skipping task {task.name}: generation pool of {embedding.fit_split.hypernet_pool.size} rows is too small")
        return None

    psi_train = embedding.psi_train(task)
    codes = task.class_codes[task.split("train")]
    projection = fit_projection(
        psi_train[gen_pos], r=cfg.random_features, d_main=net.config.d_main,
        seed=int(rng.integers(2 ** 31)),
    )
    X_gen = apply_projection(projection, psi_train[gen_pos])
    X_grad = apply_projection(projection, psi_train[grad_pos])
    K = task.n_classes

    tape = Tape(dtype=np.dtype(cfg.dtype).type)
    phi = phi_nodes(tape, net, trainable=True)
    x_gen = tape.constant(X_gen, "x_gen")
    theta = generate_on_tape(tape, phi, net.config, x_gen, labels=codes[gen_pos], n_classes=K)
    H_grad, logits = forward_on_tape(tape, theta, tape.constant(X_grad, "x_grad"))
    alpha = cfg.effective_alpha
    if alpha > 0.0:
        H_gen, _ = forward_on_tape(tape, theta, x_gen)
        ret = retrieval_on_tape(tape, H_grad, H_gen, one_hot_labels(codes[gen_pos] + 1, K), cfg.tau)
        logits = tape.mix(logits, ret, alpha)
    loss = tape.ce_loss(logits, one_hot_labels(codes[grad_pos] + 1, K))
    grads = {k: np.asarray(v, dtype=np.float64) for k, v in grad(tape, loss).items()}
    return DrawResult(task=task.name, loss=float(loss.value), grads=grads, gen_rows=gen_pos, grad_rows=grad_pos)


# --- Step, validation, selection ---

def meta_step(
    net: HyperNetwork,
    optimizer: Optimizer,
    collection: MetaCollection,
    cfg: MetaTrainConfig,
    step: int,
) -> Tuple[HyperNetwork, MetaStepReport]:
    """Accumulate A draws and apply one optimizer update."""
    if len(collection) == 0:
        raise DataError("Meta-training collection is empty")

    draws = run_ordered(
        lambda a: draw_gradient(net, collection, cfg, step, a),
        list(range(cfg.accumulation)),
        cfg.workers,
    )
    used = [d for d in draws if d is not None]
    if not used:
        raise DataError(f"Step {step}: every draw was skipped; no task can train the hypernetwork")

    total = {k: np.zeros_like(v) for k, v in net.params.items()}
    for d in used:
        for k, g in d.grads.items():
            total[k] += g

    params = optimizer.step(net.params, total)
    report = MetaStepReport(
        step=step,
        loss=float(np.mean([d.loss for d in used])),
        accumulation=cfg.accumulation,
        n_used=len(used),
        n_skipped=len(draws) - len(used),
    )
    return HyperNetwork(config=net.config, params=params), report


def few_shot_score(net: HyperNetwork, task: TabularTask, embedding: TaskEmbedding, cfg: MetaTrainConfig, index: int) -> float:
    """AUC on the test split of a network generated from one generation batch, no fine-tuning."""
    rng = np.random.default_rng([cfg.seed, index])
    pool = embedding.fit_split.hypernet_pool
    gen_pos = np.sort(rng.permutation(pool)[:min(cfg.batch_gen, pool.size)])
    if gen_pos.size < 2:
        raise DataError(f"Task {task.name}: generation pool too small for validation")

    psi_train = embedding.psi_train(task)
    codes = task.class_codes[task.split("train")]
    projection = fit_projection(
        psi_train[gen_pos], r=cfg.random_features, d_main=net.config.d_main,
        seed=int(rng.integers(2 ** 31)),
    )
    X_gen = apply_projection(projection, psi_train[gen_pos])
    Y_gen = one_hot_labels(codes[gen_pos] + 1, task.n_classes)
    theta = generate_weights(net, X_gen, Y_gen)

    test = task.split("test")
    X_test = apply_projection(projection, build_psi(embedding.psi, task.X[test]))
    H_test, logits = forward_main(theta, X_test)
    alpha = cfg.effective_alpha
    if alpha > 0.0:
        H_gen, _ = forward_main(theta, X_gen)
        logits = combined_logits(logits, retrieval_logits(H_test, H_gen, Y_gen, cfg.tau), alpha)
    return auc(predict_proba(logits), task.y[test])


def meta_validate(net: HyperNetwork, collection: MetaCollection, cfg: MetaTrainConfig) -> float:
    """Mean few-shot AUC over the validation tasks; NaN when no task can be scored."""
    scores = []
    for index, task in enumerate(collection.tasks):
        if not task.is_classification:
            logger.warning(f"Skipping validation task {task.name}: not a classification task")
            continue
        try:
            scores.append(few_shot_score(net, task, _resolve_embedding(collection, task), cfg, index))
        except UndefinedMetricError as e:
            logger.warning(f"Skipping validation task {task.name}: {e}")
    if not scores:
        logger.warning("No validation task could be scored")
        return float("nan")
    return float(np.mean(scores))


def select_checkpoint(scores: Sequence[float]) -> int:
    """Index of the best score; ties go to the earliest, NaN never wins."""
    if len(scores) == 0:
        raise DataError("Cannot select a checkpoint from an empty history")
    values = np.nan_to_num(np.asarray(scores, dtype=np.float64), nan=-np.inf)
    return int(np.argmax(values))


# --- Checkpoint files ---

def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    meta, tensors = hypernet_to_state(checkpoint.net)
    opt = checkpoint.optimizer
    tensors.update(opt.state_tensors())
    tensors["history.steps"] = np.array([s for s, _ in checkpoint.history], dtype=np.int64)
    tensors["history.scores"] = np.array([v for _, v in checkpoint.history], dtype=np.float64)
    metadata = {
        "checkpoint_version": checkpoint.version,
        "hypernet": meta,
        "optimizer": {
            "kind": opt.kind, "lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps,
            "step_count": opt.step_count,
        },
        "step": checkpoint.step,
        "config": checkpoint.config,
    }
    write_container(path, CHECKPOINT_KIND, metadata, tensors)


def load_checkpoint(path: Path) -> Checkpoint:
    _, metadata, tensors = read_container(path, expected_kind=CHECKPOINT_KIND)
    version = metadata.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    net = hypernet_from_state(metadata["hypernet"], tensors)
    o = metadata["optimizer"]
    optimizer = Optimizer(kind=o["kind"], lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"], step_count=o["step_count"])
    optimizer.load_state_tensors(tensors)
    history = [(int(s), float(v)) for s, v in zip(tensors["history.steps"], tensors["history.scores"])]
    return Checkpoint(
        net=net, optimizer=optimizer, step=metadata["step"],
        history=history, config=metadata.get("config", {}), version=version,
    )


def load_hypernetwork(path: Path) -> HyperNetwork:
    return load_checkpoint(path).net


def _append_csv_row(path: Path, columns: Sequence[str], row: Sequence) -> None:
    new_file = not path.exists()
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(columns)
        writer.writerow(row)


# --- The loop ---

class MetaTrainer:
    """Runs meta-training and keeps the checkpoint with the best meta-validation score."""

    def __init__(
        self,
        config: MetaTrainConfig,
        hyper_config: HyperNetConfig,
        train: MetaCollection,
        out_dir: Path,
        val: Optional[MetaCollection] = None,
    ):
        if len(train) == 0:
            raise DataError("Meta-training collection is empty")
        self.config = config
        self.hyper_config = hyper_config
        self.train = train
        self.val = val
        self.out_dir = Path(out_dir)
        self.checkpoint_dir = self.out_dir / "checkpoints"

    def _snapshot(self, net: HyperNetwork, optimizer: Optimizer, step: int, history) -> Path:
        path = self.checkpoint_dir / f"step_{step:06d}.iltm"
        save_checkpoint(
            Checkpoint(net=net, optimizer=optimizer, step=step, history=list(history), config=self.config.echo()),
            path,
        )
        return path

    def _validate(self, net, optimizer, step, history, paths, started) -> None:
        score = meta_validate(net, self.val, self.config)
        history.append((step, score))
        paths.append(self._snapshot(net, optimizer, step, history))
        _append_csv_row(
            self.out_dir / "meta_val.csv", META_VAL_COLUMNS,
            [step, repr(score), f"{time.monotonic() - started:.3f}"],
        )
        logger.info(f"Step {step}: meta-validation AUC {score:.4f}")

    def run(self) -> MetaTrainResult:
        started = time.monotonic()
        cfg = self.config
        result = MetaTrainResult(success=False)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        net = HyperNetwork.init(self.hyper_config, seed=cfg.seed)
        optimizer = Optimizer(kind=cfg.optimizer, lr=cfg.lr)
        history: List[Tuple[int, float]] = []
        paths: List[Path] = []
        logger.info(
            f"Meta-training {net.n_params} parameters on {len(self.train)} tasks "
            f"(A={cfg.accumulation}, max_steps={cfg.max_steps})"
        )

        if self.val is not None:
            self._validate(net, optimizer, 0, history, paths, started)

        step = 0
        report = None
        while step < cfg.max_steps:
            net, report = meta_step(net, optimizer, self.train, cfg, step)
            step += 1
            _append_csv_row(self.out_dir / "train_loss.csv", ("step", "loss"), [step, repr(report.loss)])
            logger.debug(f"Step {step}: loss {report.loss:.6f} ({report.n_skipped} draws skipped)")

            out_of_time = cfg.time_budget is not None and time.monotonic() - started > cfg.time_budget
            if self.val is not None and (step % cfg.val_period == 0 or step == cfg.max_steps or out_of_time):
                self._validate(net, optimizer, step, history, paths, started)
            if out_of_time:
                logger.warning(f"Time budget of {cfg.time_budget}s exhausted after {step} steps")
                break

        best_path = self.out_dir / "best.iltm"
        if history:
            best = select_checkpoint([s for _, s in history])
            result.best_step, result.best_score = history[best]
            shutil.copyfile(paths[best], best_path)
        else:
            save_checkpoint(
                Checkpoint(net=net, optimizer=optimizer, step=step, config=cfg.echo()), best_path,
            )
            result.best_step = step

        result.success = True
        result.steps = step
        result.final_loss = report.loss if report is not None else None
        result.checkpoint_path = str(best_path)
        result.duration_seconds = time.monotonic() - started
        logger.info(
            f"Meta-training completed: steps={result.steps}, best_step={result.best_step}, "
            f"best_score={result.best_score} in {result.duration_seconds:.2f}s"
        )
        return result
