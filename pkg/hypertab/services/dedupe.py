"""
Discarding meta-training candidates that overlap the evaluation datasets.

Stages run in a fixed order and the first one that fires is recorded:
explicit ids, exact name, keyword-cleaned name, substring, Levenshtein,
token sort, shape twin, edge-case bounds, sampled-row leak.
"""

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from rapidfuzz.distance import Levenshtein

from hypertab.errors import DataError, HyperTabError
from hypertab.models import DEDUPE_KEYWORDS, DedupeConfig, DiscardRecord
from hypertab.scheduler import run_ordered
from hypertab.services.tabular import UNKNOWN_TOKEN, TabularTask, list_tasks, load_task, read_schema

logger = logging.getLogger(__name__)

RULES = (
    "explicit-eval",
    "exact-name",
    "keyword-name",
    "substring",
    "levenshtein",
    "token-sort",
    "structural",
    "edge-case",
    "sample-leak",
)
IO_RULE = "io-error"
DISCARD_COLUMNS = ("name", "verdict", "rule", "evidence")

_SEPARATORS = re.compile(r"[^a-z0-9]+")
_TOKEN_SPLIT = re.compile(r"[^0-9A-Za-z]+")
_DIGITS = re.compile(r"[0-9]+")


# --- Name rules ---

def sanitize_name(name: str) -> str:
    """Lowercase, trim, and collapse every run of non-alphanumerics to one '-'."""
    return _SEPARATORS.sub("-", name.strip().lower()).strip("-")


def clean_keywords(name: str, keywords: Iterable[str] = DEDUPE_KEYWORDS) -> str:
    """Sanitized name without listed keywords, year tokens or digit runs."""
    drop = set(keywords)
    tokens = []
    for token in sanitize_name(name).split("-"):
        if token in drop:
            continue
        token = _DIGITS.sub("", token)
        if token:
            tokens.append(token)
    return "-".join(tokens)


def levenshtein_similarity(a: str, b: str) -> float:
    """1 - edit distance / longer length; 1.0 for two empty strings."""
    return float(Levenshtein.normalized_similarity(a, b))


def token_sort_ratio(a: str, b: str) -> float:
    def normalize(s: str) -> str:
        return " ".join(sorted(t for t in _TOKEN_SPLIT.split(s) if t))

    return levenshtein_similarity(normalize(a), normalize(b))


# --- Row multisets ---

def _canonical_cells(task: TabularTask, row: int) -> Tuple[str, ...]:
    cells = []
    for j, column in enumerate(task.schema.columns):
        value = task.X[row, j]
        if column.is_categorical:
            if np.isnan(value):
                cells.append("")
            elif value < 0:
                cells.append(UNKNOWN_TOKEN)
            else:
                cells.append(column.vocabulary[int(value)])
        else:
            cells.append(repr(float(value)))
    return tuple(sorted(cells))


def sample_rows(task: TabularTask, k: int, seed: int) -> Dict[Tuple[str, ...], int]:
    """Canonical value multisets of k uniformly drawn rows, mapped to their row index."""
    rng = np.random.default_rng(seed)
    rows = rng.choice(task.n_rows, size=min(k, task.n_rows), replace=False)
    return {_canonical_cells(task, int(r)): int(r) for r in sorted(rows)}


def _find_leak(candidate: TabularTask, sampled: Dict[Tuple[str, ...], int]) -> Optional[Tuple[int, int]]:
    for row in range(candidate.n_rows):
        hit = sampled.get(_canonical_cells(candidate, row))
        if hit is not None:
            return hit, row
    return None


def sample_leak_check(eval_task: TabularTask, candidate: TabularTask, k: int = 5, seed: int = 0) -> Tuple[bool, str]:
    """
    True when some candidate row holds the same values as a sampled eval row,
    in any column order. Tables of different widths never match.
    """
    if k < 1:
        raise DataError(f"Leak sample count must be >= 1, got {k}")
    if eval_task.n_features != candidate.n_features:
        return False, ""
    found = _find_leak(candidate, sample_rows(eval_task, k, seed))
    if found is None:
        return False, ""
    return True, f"eval={eval_task.name},eval_row={found[0]},row={found[1]}"


# --- Task handles ---

@dataclass
class TaskHandle:
    """Dataset metadata with its values loaded only when needed."""
    name: str
    n_rows: int
    n_features: int
    dataset_id: Optional[str] = None
    directory: Optional[Path] = None
    task: Optional[TabularTask] = field(default=None, repr=False)

    @classmethod
    def from_task(cls, task: TabularTask) -> "TaskHandle":
        return cls(
            name=task.name, n_rows=task.n_rows, n_features=task.n_features,
            dataset_id=task.schema.dataset_id, task=task,
        )

    @classmethod
    def from_directory(cls, directory: Path, name: str) -> "TaskHandle":
        directory = Path(directory)
        schema = read_schema(directory / f"{name}.schema")
        try:
            with open(directory / f"{name}.csv", newline="") as f:
                n_rows = max(0, sum(1 for row in csv.reader(f) if row) - 1)
        except OSError as e:
            raise DataError(f"Cannot read {name}.csv: {e}") from e
        return cls(name=name, n_rows=n_rows, n_features=schema.n_features,
                   dataset_id=schema.dataset_id, directory=directory)

    def load(self) -> TabularTask:
        if self.task is None:
            if self.directory is None:
                raise DataError(f"Task {self.name} has no values to load")
            self.task = load_task(self.directory, self.name)
        return self.task


def read_eval_list(path: Path) -> Tuple[List[str], List[str]]:
    """Eval task names and explicit dataset ids ("did=<id>" lines)."""
    names, ids = [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("did="):
                ids.append(line[4:].strip())
            else:
                names.append(line)
    return names, ids


# --- Pipeline ---

@dataclass
class EvalIndex:
    """Eval-side lookups, built once and shared read-only by every candidate."""
    sanitized: Dict[str, str]
    cleaned: Dict[str, str]
    shapes: Dict[Tuple[int, int], str]
    explicit_ids: FrozenSet[str]
    names: List[Tuple[str, str]]
    leak_rows: List[Tuple[str, int, Dict[Tuple[str, ...], int]]]

    @classmethod
    def build(cls, evals: Sequence[TaskHandle], cfg: DedupeConfig, explicit_ids: Iterable[str] = ()) -> "EvalIndex":
        ordered = sorted(evals, key=lambda h: h.name)
        sanitized: Dict[str, str] = {}
        cleaned: Dict[str, str] = {}
        shapes: Dict[Tuple[int, int], str] = {}
        names = []
        leak_rows = []
        for i, handle in enumerate(ordered):
            s = sanitize_name(handle.name)
            c = clean_keywords(handle.name, cfg.keywords)
            sanitized.setdefault(s, handle.name)
            if c:
                cleaned.setdefault(c, handle.name)
            shapes.setdefault((handle.n_rows, handle.n_features), handle.name)
            names.append((s, handle.name))
            # Unreadable eval values are fatal.
            task = handle.load()
            leak_rows.append((handle.name, task.n_features, sample_rows(task, cfg.leak_samples, seed=cfg.seed + i)))
        return cls(
            sanitized=sanitized, cleaned=cleaned, shapes=shapes,
            explicit_ids=frozenset(explicit_ids), names=names, leak_rows=leak_rows,
        )


def _best_match(name: str, index: EvalIndex, score) -> Tuple[float, Optional[str]]:
    best, match = -1.0, None
    for eval_sanitized, eval_name in index.names:
        value = score(name, eval_sanitized)
        if value > best:
            best, match = value, eval_name
    return best, match


def _edge_case(handle: TaskHandle, cfg: DedupeConfig) -> Optional[str]:
    if handle.n_features < cfg.min_features:
        return f"F={handle.n_features}<{cfg.min_features}"
    if handle.n_rows < cfg.min_rows:
        return f"N={handle.n_rows}<{cfg.min_rows}"
    if handle.n_features > cfg.max_features:
        return f"F={handle.n_features}>{cfg.max_features}"
    if handle.n_rows > cfg.max_rows:
        return f"N={handle.n_rows}>{cfg.max_rows}"
    return None


def judge(handle: TaskHandle, index: EvalIndex, cfg: DedupeConfig) -> DiscardRecord:
    """Verdict for one candidate; the first stage that fires is recorded."""
    def discard(rule: str, evidence: str) -> DiscardRecord:
        return DiscardRecord(name=handle.name, verdict="discard", rule=rule, evidence=evidence)

    if handle.dataset_id is not None and handle.dataset_id in index.explicit_ids:
        return discard("explicit-eval", f"did={handle.dataset_id}")

    name = sanitize_name(handle.name)
    if name in index.sanitized:
        return discard("exact-name", f"eval={index.sanitized[name]}")

    cleaned = clean_keywords(handle.name, cfg.keywords)
    if cleaned and cleaned in index.cleaned:
        return discard("keyword-name", f"eval={index.cleaned[cleaned]},cleaned={cleaned}")

    for eval_sanitized, eval_name in index.names:
        if eval_sanitized and eval_sanitized in name:
            return discard("substring", f"eval={eval_name}")

    for rule, score in (("levenshtein", levenshtein_similarity), ("token-sort", token_sort_ratio)):
        best, match = _best_match(name, index, score)
        if match is not None and best >= cfg.threshold:
            return discard(rule, f"eval={match},score={best:.4f}")

    shape = (handle.n_rows, handle.n_features)
    if shape in index.shapes:
        return discard("structural", f"eval={index.shapes[shape]},N={shape[0]},F={shape[1]}")

    bound = _edge_case(handle, cfg)
    if bound is not None:
        return discard("edge-case", bound)

    candidates = [entry for entry in index.leak_rows if entry[1] == handle.n_features]
    if candidates:
        try:
            task = handle.load()
        except HyperTabError as e:
            logger.warning(f"Candidate {handle.name} is unreadable: {e}")
            return discard(IO_RULE, str(e))
        for eval_name, _, sampled in candidates:
            found = _find_leak(task, sampled)
            if found is not None:
                return discard("sample-leak", f"eval={eval_name},eval_row={found[0]},row={found[1]}")

    return DiscardRecord(name=handle.name, verdict="keep")


def run_pipeline(
    candidates: Sequence[TaskHandle],
    evals: Sequence[TaskHandle],
    cfg: Optional[DedupeConfig] = None,
    explicit_ids: Iterable[str] = (),
    workers: Optional[int] = None,
) -> List[DiscardRecord]:
    """One record per candidate, sorted by name."""
    cfg = cfg or DedupeConfig()
    index = EvalIndex.build(evals, cfg, explicit_ids)
    ordered = sorted(candidates, key=lambda h: h.name)
    records = run_ordered(lambda h: judge(h, index, cfg), ordered, workers)
    kept = sum(r.verdict == "keep" for r in records)
    logger.info(f"Dedupe: {kept} kept, {len(records) - kept} discarded out of {len(records)} candidates")
    return records


def load_handles(directory: Path, names: Optional[Sequence[str]] = None) -> Tuple[List[TaskHandle], List[DiscardRecord]]:
    """Handles for the named tasks; tasks whose metadata cannot be read come back as io-error records."""
    handles, failed = [], []
    for name in (names if names is not None else list_tasks(directory)):
        try:
            handles.append(TaskHandle.from_directory(directory, name))
        except HyperTabError as e:
            logger.warning(f"Candidate {name} is unreadable: {e}")
            failed.append(DiscardRecord(name=name, verdict="discard", rule=IO_RULE, evidence=str(e)))
    return handles, failed


def summarize(records: Sequence[DiscardRecord]) -> Dict[str, int]:
    """Counts of kept candidates and of discards per rule."""
    counts: Dict[str, int] = {"keep": 0}
    for record in records:
        key = "keep" if record.verdict == "keep" else record.rule
        counts[key] = counts.get(key, 0) + 1
    return counts


def write_discard_file(records: Sequence[DiscardRecord], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DISCARD_COLUMNS)
        for r in sorted(records, key=lambda r: r.name):
            writer.writerow([r.name, r.verdict, r.rule or "", r.evidence])
