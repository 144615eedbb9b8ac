"""Task-embedding cache: fit the per-task embedding stage once and reuse it."""

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from hypertab.config import get_settings
from hypertab.errors import DataError, HyperTabError
from hypertab.scheduler import run_ordered
from hypertab.services.container import read_container, write_container
from hypertab.services.gbdt import FitSplit, GbdtConfig, dynamic_fit_split, flavor_config
from hypertab.services.preprocess import PsiVariant, build_psi, fit_psi, psi_from_state, psi_to_state
from hypertab.services.tabular import TabularTask, list_tasks, load_task

logger = logging.getLogger(__name__)

CACHE_KIND = "task-embedding"


@dataclass(frozen=True)
class CacheKey:
    """Identifies one cached embedding: task, variant, seed and GBDT config."""
    task: str
    tag: str
    seed: int
    gbdt_config: Optional[GbdtConfig]
    data_split: str = "dynamic"

    @property
    def config_hash(self) -> str:
        payload = self.gbdt_config.canonical_json() if self.gbdt_config is not None else "none"
        payload += f"|split={self.data_split}"
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def filename(self) -> str:
        return f"{self.task}.{self.tag}.s{self.seed}.{self.config_hash}.iltm"


@dataclass
class TaskEmbedding:
    """Fitted embedding stage of one task plus its fit/pool split of the train rows."""
    key: CacheKey
    psi: PsiVariant
    fit_split: FitSplit
    _psi_train: Optional[np.ndarray] = field(default=None, repr=False)

    def psi_train(self, task: TabularTask) -> np.ndarray:
        """Psi of every train row, computed once."""
        if self._psi_train is None:
            self._psi_train = build_psi(self.psi, task.X[task.split("train")])
        return self._psi_train


@dataclass
class CacheBuildResult:
    """Result of a cache build over a task directory."""
    success: bool
    built: int = 0
    reused: int = 0
    failed: int = 0
    error: Optional[str] = None
    duration_seconds: float = 0.0


def cache_key(task: str, tag: str, seed: int, gbdt_estimators: int = 100,
              gbdt_lr: Optional[float] = None, data_split: str = "dynamic") -> CacheKey:
    config = None if tag == "R" else flavor_config(tag[-1], max_rounds=gbdt_estimators, learning_rate=gbdt_lr)
    return CacheKey(task=task, tag=tag, seed=seed, gbdt_config=config, data_split=data_split)


def cache_dir(tasks_dir: Path) -> Path:
    return Path(tasks_dir) / get_settings().cache_dirname


def fit_task_embedding(task: TabularTask, key: CacheKey) -> TaskEmbedding:
    """Fit the embedding stage on the GBDT half of the train split."""
    train = task.split("train")
    if train.size == 0:
        raise DataError(f"Task {task.name} has an empty train split")
    fit_split = dynamic_fit_split(train.size, key.seed, mode=key.data_split)
    rows = train[fit_split.gbdt_fit]
    psi = fit_psi(
        key.tag, task.X[rows], task.y[rows], task.n_classes, task.schema,
        gbdt_config=key.gbdt_config, seed=key.seed,
    )
    return TaskEmbedding(key=key, psi=psi, fit_split=fit_split)


def save_embedding(embedding: TaskEmbedding, path: Path) -> None:
    meta, tensors = psi_to_state(embedding.psi)
    tensors["split.gbdt_fit"] = embedding.fit_split.gbdt_fit
    tensors["split.hypernet_pool"] = embedding.fit_split.hypernet_pool
    metadata = {
        "task": embedding.key.task,
        "tag": embedding.key.tag,
        "seed": embedding.key.seed,
        "config_hash": embedding.key.config_hash,
        "data_split": embedding.key.data_split,
        "psi": meta,
    }
    write_container(path, CACHE_KIND, metadata, tensors)


def load_embedding(path: Path, key: CacheKey) -> TaskEmbedding:
    _, metadata, tensors = read_container(path, expected_kind=CACHE_KIND)
    if metadata.get("config_hash") != key.config_hash:
        raise DataError(f"{path}: cache was built with a different GBDT config")
    fit_split = FitSplit(
        gbdt_fit=tensors.pop("split.gbdt_fit").astype(np.int64),
        hypernet_pool=tensors.pop("split.hypernet_pool").astype(np.int64),
    )
    return TaskEmbedding(key=key, psi=psi_from_state(metadata["psi"], tensors), fit_split=fit_split)


class EmbeddingCache:
    """Reads and writes task embeddings stored beside the task files."""

    def __init__(self, tasks_dir: Path):
        self.tasks_dir = Path(tasks_dir)
        self.root = cache_dir(self.tasks_dir)

    def path_for(self, key: CacheKey) -> Path:
        return self.root / key.filename()

    def exists(self, key: CacheKey) -> bool:
        return self.path_for(key).exists()

    def load(self, key: CacheKey) -> TaskEmbedding:
        path = self.path_for(key)
        if not path.exists():
            raise DataError(f"No cached embedding for task {key.task} ({path.name}); run build-cache first")
        return load_embedding(path, key)

    def get_or_build(self, task: TabularTask, key: CacheKey, build: bool = False) -> TaskEmbedding:
        if self.exists(key) or not build:
            return self.load(key)
        embedding = fit_task_embedding(task, key)
        save_embedding(embedding, self.path_for(key))
        logger.debug(f"Cached embedding for {task.name} at {self.path_for(key)}")
        return embedding

    def build_all(
        self,
        tag: str,
        seed: int,
        gbdt_estimators: int = 100,
        gbdt_lr: Optional[float] = None,
        data_split: str = "dynamic",
        workers: Optional[int] = None,
    ) -> CacheBuildResult:
        """Fit and cache the embedding of every task in the directory; failures are counted, not fatal."""
        start = time.monotonic()
        result = CacheBuildResult(success=False)
        names = list_tasks(self.tasks_dir)
        if not names:
            result.error = f"No tasks found in {self.tasks_dir}"
            logger.error(result.error)
            return result

        def build_one(name: str) -> str:
            key = cache_key(name, tag, seed, gbdt_estimators, gbdt_lr, data_split)
            if self.exists(key):
                return "reused"
            try:
                task = load_task(self.tasks_dir, name, seed=seed)
                self.get_or_build(task, key, build=True)
                return "built"
            except HyperTabError as e:
                logger.error(f"Error building cache for {name}: {e}")
                return "failed"

        outcomes = run_ordered(build_one, names, workers)
        result.built = outcomes.count("built")
        result.reused = outcomes.count("reused")
        result.failed = outcomes.count("failed")
        result.success = result.failed == 0
        if result.failed:
            result.error = f"{result.failed} task(s) failed"
        result.duration_seconds = time.monotonic() - start

        logger.info(
            f"Cache build completed: success={result.success}, "
            f"built={result.built}, reused={result.reused}, failed={result.failed} "
            f"in {result.duration_seconds:.2f}s"
        )
        return result


def load_collection_embeddings(
    tasks: List[TabularTask],
    tasks_dir: Path,
    tag: str,
    seed: int,
    gbdt_estimators: int = 100,
    gbdt_lr: Optional[float] = None,
    data_split: str = "dynamic",
    build: bool = False,
) -> Dict[str, TaskEmbedding]:
    """Embeddings for every task, keyed by task name."""
    cache = EmbeddingCache(tasks_dir)

    def fetch(task: TabularTask) -> TaskEmbedding:
        key = cache_key(task.name, tag, seed, gbdt_estimators, gbdt_lr, data_split)
        return cache.get_or_build(task, key, build=build)

    return dict(zip([t.name for t in tasks], run_ordered(fetch, tasks)))
