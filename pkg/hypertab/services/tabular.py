"""Tabular tasks: schemas, CSV ingestion, splits and label encoding."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from hypertab.errors import DataError, SchemaError

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
CLASS_TARGET = "class_target"
REGRESSION_TARGET = "regression_target"

CLASSIFICATION = "classification"
REGRESSION = "regression"

# Categorical cell codes outside the vocabulary range. Missing cells are NaN.
UNKNOWN_CODE = -1.0
UNKNOWN_TOKEN = "__unknown__"

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class ColumnSpec:
    """One feature column of a schema."""
    name: str
    kind: str
    vocabulary: Tuple[str, ...] = ()

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class Schema:
    """Column kinds, vocabularies and the target column."""
    columns: Tuple[ColumnSpec, ...]
    target: str
    task_kind: str
    target_vocabulary: Tuple[str, ...] = ()
    dataset_id: Optional[str] = None

    def __post_init__(self):
        names = [c.name for c in self.columns] + [self.target]
        if len(set(names)) != len(names):
            raise SchemaError(f"Duplicate column names in schema: {names}")
        if self.task_kind not in (CLASSIFICATION, REGRESSION):
            raise SchemaError(f"Unknown task kind: {self.task_kind}")
        for col in self.columns:
            if col.kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"Unknown column kind for {col.name}: {col.kind}")
            if len(set(col.vocabulary)) != len(col.vocabulary):
                raise SchemaError(f"Duplicate vocabulary entries in column {col.name}")

    @property
    def feature_names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def subset(self, indices: Sequence[int]) -> "Schema":
        """Schema restricted to the given feature columns."""
        return Schema(
            columns=tuple(self.columns[i] for i in indices),
            target=self.target,
            task_kind=self.task_kind,
            target_vocabulary=self.target_vocabulary,
            dataset_id=self.dataset_id,
        )


@dataclass(frozen=True)
class TabularTask:
    """
    One dataset: feature table, labels and named splits.

    X holds numeric values directly and categorical vocabulary indices as
    floats (UNKNOWN_CODE for out-of-vocabulary values); missing cells are NaN.
    Classification labels are 1..n_classes; regression targets are reals and
    n_classes is 0.
    """
    name: str
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    splits: Mapping[str, np.ndarray]
    schema: Schema
    source: Optional[str] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"Task {self.name}: X must be N x d with N, d >= 1, got {X.shape}")
        if X.shape[1] != self.schema.n_features:
            raise DataError(
                f"Task {self.name}: X has {X.shape[1]} columns, schema has {self.schema.n_features}"
            )
        y = np.asarray(self.y, dtype=np.int64 if self.n_classes > 0 else np.float64)
        if y.shape != (X.shape[0],):
            raise DataError(f"Task {self.name}: y has shape {y.shape}, expected ({X.shape[0]},)")
        if self.n_classes > 0 and (y.min() < 1 or y.max() > self.n_classes):
            raise DataError(f"Task {self.name}: labels must lie in 1..{self.n_classes}")

        splits = {}
        seen = np.zeros(X.shape[0], dtype=bool)
        for split_name, idx in self.splits.items():
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= X.shape[0]):
                raise DataError(f"Task {self.name}: split {split_name} has indices outside [0, {X.shape[0]})")
            if np.unique(idx).size != idx.size or seen[idx].any():
                raise DataError(f"Task {self.name}: split {split_name} overlaps another split")
            seen[idx] = True
            idx.setflags(write=False)
            splits[split_name] = idx

        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "splits", splits)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.n_classes > 0

    @property
    def class_codes(self) -> np.ndarray:
        """Zero-based class indices."""
        return (self.y - 1).astype(np.int64)

    def split(self, name: str) -> np.ndarray:
        if name not in self.splits:
            raise DataError(f"Task {self.name} has no '{name}' split")
        return self.splits[name]


@dataclass
class MetaCollection:
    """An ordered group of tasks with a role tag and cached embedding handles."""
    tasks: List[TabularTask]
    role: str
    embeddings: Dict[str, object] = field(default_factory=dict)

    ROLES = ("meta-train", "meta-val", "meta-test", "candidates", "evals")

    def __post_init__(self):
        if self.role not in self.ROLES:
            raise DataError(f"Unknown collection role: {self.role}")

    @property
    def names(self) -> List[str]:
        return [t.name for t in self.tasks]

    def __len__(self) -> int:
        return len(self.tasks)


def validate_disjoint_roles(*collections: MetaCollection) -> None:
    """Raise if two collections share a task name."""
    owner: Dict[str, str] = {}
    for collection in collections:
        for name in collection.names:
            if name in owner and owner[name] != collection.role:
                raise DataError(f"Task {name} appears in both {owner[name]} and {collection.role}")
            owner[name] = collection.role


# --- Schema files ---

def read_schema(path: Path) -> Schema:
    """
    Read a sidecar schema file.

    One CSV line per column: name,kind[,vocabulary...]; an optional
    "# did=<id>" comment carries a dataset identifier.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Schema file not found: {path}")

    columns: List[ColumnSpec] = []
    target = None
    task_kind = None
    target_vocab: Tuple[str, ...] = ()
    dataset_id = None

    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(f):
            if not row or not row[0].strip():
                continue
            head = row[0].strip()
            if head.startswith("#"):
                comment = ",".join(row).lstrip("#").strip()
                if comment.startswith("did="):
                    dataset_id = comment[len("did="):].strip()
                continue
            if len(row) < 2:
                raise SchemaError(f"{path}: line for column {head} has no kind")
            kind = row[1].strip()
            vocab = tuple(row[2:])
            if kind in (CLASS_TARGET, REGRESSION_TARGET):
                if target is not None:
                    raise SchemaError(f"{path}: more than one target column")
                target = head
                task_kind = CLASSIFICATION if kind == CLASS_TARGET else REGRESSION
                target_vocab = vocab
            else:
                columns.append(ColumnSpec(name=head, kind=kind, vocabulary=vocab))

    if target is None:
        raise SchemaError(f"{path}: no target column")
    return Schema(
        columns=tuple(columns),
        target=target,
        task_kind=task_kind,
        target_vocabulary=target_vocab,
        dataset_id=dataset_id,
    )


def write_schema(schema: Schema, path: Path) -> None:
    """Write a schema in the sidecar format read by read_schema."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        if schema.dataset_id is not None:
            f.write(f"# did={schema.dataset_id}\n")
        writer = csv.writer(f, lineterminator="\n")
        for col in schema.columns:
            writer.writerow([col.name, col.kind, *col.vocabulary])
        kind = CLASS_TARGET if schema.task_kind == CLASSIFICATION else REGRESSION_TARGET
        writer.writerow([schema.target, kind, *schema.target_vocabulary])


# --- CSV ingestion ---

def _parse_numeric(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _parse_categorical(cell: str, lookup: Dict[str, int]) -> float:
    if cell == "":
        return math.nan
    return float(lookup.get(cell, UNKNOWN_CODE))


def _parse_label(cell: str, schema: Schema, lookup: Dict[str, int], row_number: int) -> float:
    cell = cell.strip()
    if not cell:
        raise DataError(f"Missing target value on data row {row_number}")
    if schema.task_kind == REGRESSION:
        try:
            return float(cell)
        except ValueError:
            raise DataError(f"Unparseable regression target '{cell}' on data row {row_number}")
    if lookup:
        if cell not in lookup:
            raise DataError(f"Target value '{cell}' on data row {row_number} is not in the target vocabulary")
        return float(lookup[cell] + 1)
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"Unparseable class label '{cell}' on data row {row_number}")
    if value != int(value) or value < 1:
        raise DataError(f"Class label '{cell}' on data row {row_number} must be an integer >= 1")
    return value


def load_csv(path: Path, schema: Schema, name: Optional[str] = None) -> TabularTask:
    """
    Parse a CSV file according to a schema.

    Empty or unparseable numeric cells become missing; categorical values
    outside the vocabulary map to the unknown code. The returned task has a
    single 'train' split covering every row.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"CSV file not found: {path}")

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file")

        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        if schema.target not in header:
            raise SchemaError(f"{path}: missing target column '{schema.target}'")
        expected = set(schema.feature_names) | {schema.target}
        if set(header) != expected:
            extra = sorted(set(header) - expected)
            missing = sorted(expected - set(header))
            raise SchemaError(f"{path}: header does not match schema (extra={extra}, missing={missing})")

        positions = [header.index(n) for n in schema.feature_names]
        target_pos = header.index(schema.target)
        lookups = [{v: i for i, v in enumerate(c.vocabulary)} for c in schema.columns]
        target_lookup = {v: i for i, v in enumerate(schema.target_vocabulary)}

        rows: List[List[float]] = []
        labels: List[float] = []
        for row_number, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: data row {row_number} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, pos, lookup in zip(schema.columns, positions, lookups):
                if col.is_categorical:
                    values.append(_parse_categorical(row[pos], lookup))
                else:
                    values.append(_parse_numeric(row[pos]))
            rows.append(values)
            labels.append(_parse_label(row[target_pos], schema, target_lookup, row_number))

    if not rows:
        raise DataError(f"{path}: zero data rows")

    X = np.array(rows, dtype=np.float64)
    if schema.task_kind == CLASSIFICATION:
        y = np.array(labels, dtype=np.int64)
        n_classes = len(schema.target_vocabulary) if schema.target_vocabulary else int(y.max())
    else:
        y = np.array(labels, dtype=np.float64)
        n_classes = 0

    return TabularTask(
        name=name or path.stem,
        X=X,
        y=y,
        n_classes=n_classes,
        splits={"train": np.arange(X.shape[0])},
        schema=schema,
        source=str(path),
    )


def _format_cell(value: float, column: ColumnSpec) -> str:
    if math.isnan(value):
        return ""
    if column.is_categorical:
        if value == UNKNOWN_CODE:
            return UNKNOWN_TOKEN
        return column.vocabulary[int(value)]
    return repr(float(value))


def write_csv(task: TabularTask, path: Path) -> None:
    """Serialize a task's table so that load_csv reproduces the parsed values."""
    schema = task.schema
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(schema.feature_names + [schema.target])
        for i in range(task.n_rows):
            cells = [_format_cell(v, c) for v, c in zip(task.X[i], schema.columns)]
            label = task.y[i]
            if task.is_classification:
                target = schema.target_vocabulary[label - 1] if schema.target_vocabulary else str(int(label))
            else:
                target = repr(float(label))
            writer.writerow(cells + [target])


# --- Splits ---

def default_splits(n_rows: int, seed: int = 0, test_fraction: float = 0.2) -> Dict[str, np.ndarray]:
    """Seeded train/test partition of row indices."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_rows)
    n_test = int(round(n_rows * test_fraction))
    if n_rows >= 2:
        n_test = min(max(n_test, 1), n_rows - 1)
    else:
        n_test = 0
    return {
        "train": np.sort(order[n_test:]),
        "test": np.sort(order[:n_test]),
    }


def read_split_file(path: Path) -> np.ndarray:
    """Newline-separated row indices."""
    with open(path, encoding="utf-8") as f:
        values = [line.strip() for line in f if line.strip()]
    try:
        return np.array([int(v) for v in values], dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path}: malformed split file ({e})")


def write_split_file(indices: Iterable[int], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i in indices:
            f.write(f"{int(i)}\n")


def with_splits(task: TabularTask, splits: Mapping[str, np.ndarray]) -> TabularTask:
    """Copy of a task with different splits."""
    return TabularTask(
        name=task.name,
        X=task.X,
        y=task.y,
        n_classes=task.n_classes,
        splits=dict(splits),
        schema=task.schema,
        source=task.source,
    )


# --- Task directories ---

def list_tasks(directory: Path) -> List[str]:
    """Names of tasks (CSV with a schema sidecar) in a directory, sorted."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"Task directory not found: {directory}")
    return sorted(p.stem for p in directory.glob("*.csv") if p.with_suffix(".schema").exists())


def load_task(directory: Path, name: str, seed: int = 0) -> TabularTask:
    """Load <name>.csv with its schema and split files (seeded 80/20 split if absent)."""
    directory = Path(directory)
    schema = read_schema(directory / f"{name}.schema")
    task = load_csv(directory / f"{name}.csv", schema, name=name)

    splits = {}
    for split_name in SPLIT_NAMES:
        split_path = directory / f"{name}.{split_name}.idx"
        if split_path.exists():
            splits[split_name] = read_split_file(split_path)
    if not splits:
        splits = default_splits(task.n_rows, seed=seed)
        logger.debug(f"Task {name}: no split files, using seeded 80/20 split")
    return with_splits(task, splits)


def save_task(task: TabularTask, directory: Path) -> None:
    """Write CSV, schema and split files for a task."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(task, directory / f"{task.name}.csv")
    write_schema(task.schema, directory / f"{task.name}.schema")
    for split_name, idx in task.splits.items():
        write_split_file(idx, directory / f"{task.name}.{split_name}.idx")


# --- Labels ---

def one_hot_labels(y: np.ndarray, n_classes: int) -> np.ndarray:
    """N x K binary matrix with a single 1 at column y_i - 1."""
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 1 or y.max() > n_classes):
        raise DataError(f"Labels must lie in 1..{n_classes}")
    out = np.zeros((y.shape[0], n_classes), dtype=np.float64)
    out[np.arange(y.shape[0]), y - 1] = 1.0
    return out
