"""
Minimal histogram gradient boosting used as a leaf embedding.

Trees are fit to loss gradients with unit hessian on quantile-binned
features. Each fitted tree routes a row to one leaf; the concatenated leaf
one-hots form the sparse embedding consumed by the preprocessing stage.
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.special import expit, log_softmax, softmax

from hypertab.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

LOGISTIC = "logistic"
SOFTMAX = "softmax"
SQUARED = "squared"

DYNAMIC_SPLIT_THRESHOLD = 2000
DYNAMIC_SPLIT_CAP = 100_000

_PROB_CLIP = 1e-6


@dataclass(frozen=True)
class GbdtConfig:
    """Boosting knobs. Flavor X is depth 6; flavor C is depth 4 with oblivious trees."""
    max_rounds: int = 100
    depth: int = 6
    learning_rate: float = 0.1
    patience: int = 50
    val_fraction: float = 0.2
    n_bins: int = 256
    min_samples_leaf: int = 1
    oblivious: bool = False

    def __post_init__(self):
        if self.max_rounds < 1 or self.depth < 1 or self.patience < 1:
            raise ConfigError(f"Invalid GBDT config: {self}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"GBDT val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.learning_rate <= 0 or self.n_bins < 2:
            raise ConfigError(f"Invalid GBDT config: {self}")

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


GBDT_FLAVORS = {
    "X": GbdtConfig(depth=6, learning_rate=0.1),
    "C": GbdtConfig(depth=4, learning_rate=0.1, oblivious=True),
}


def flavor_config(
    flavor: str,
    max_rounds: Optional[int] = None,
    learning_rate: Optional[float] = None,
) -> GbdtConfig:
    """Config for a GBDT flavor ("X" or "C") with optional overrides."""
    if flavor not in GBDT_FLAVORS:
        raise ConfigError(f"Unknown GBDT flavor: {flavor}")
    base = asdict(GBDT_FLAVORS[flavor])
    if max_rounds is not None:
        base["max_rounds"] = max_rounds
    if learning_rate is not None:
        base["learning_rate"] = learning_rate
    return GbdtConfig(**base)


@dataclass(frozen=True)
class Tree:
    """
    Binary tree stored as parallel node arrays.

    Internal nodes have feature >= 0 and send a row left when
    x[feature] <= threshold (missing values follow missing_left). Leaves have
    feature == -1 and a leaf ordinal numbered left to right from 0.
    """
    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_ordinal: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @classmethod
    def single_leaf(cls, value: float = 0.0) -> "Tree":
        return cls(
            feature=np.array([-1], dtype=np.int64),
            threshold=np.array([0.0]),
            missing_left=np.array([True]),
            left=np.array([-1], dtype=np.int64),
            right=np.array([-1], dtype=np.int64),
            value=np.array([value]),
            leaf_ordinal=np.array([0], dtype=np.int64),
        )

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf ordinal for every row of X."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = np.nonzero(feat >= 0)[0]
            if active.size == 0:
                break
            cur = node[active]
            x = X[active, feat[active]]
            go_left = np.where(np.isnan(x), self.missing_left[cur], x <= self.threshold[cur])
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return self.leaf_ordinal[node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        leaf_values = self.value[self.feature < 0]
        return leaf_values[self.apply(X)]


@dataclass(frozen=True)
class GbdtModel:
    """Fitted ensemble; trees are stored round-major, one per output per round."""
    trees: Tuple[Tree, ...]
    loss: str
    n_classes: int
    n_features: int
    trees_per_round: int
    n_rounds: int
    base_score: np.ndarray
    bin_edges: Tuple[np.ndarray, ...]
    config: GbdtConfig
    val_history: Tuple[float, ...] = ()

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def leaf_counts(self) -> np.ndarray:
        return np.array([t.n_leaves for t in self.trees], dtype=np.int64)

    @property
    def n_leaves(self) -> int:
        """Total leaf count M, the embedding width."""
        return int(self.leaf_counts.sum())

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        X = _check_width(self, X)
        out = np.tile(self.base_score, (X.shape[0], 1))
        for i, tree in enumerate(self.trees):
            out[:, i % self.trees_per_round] += self.config.learning_rate * tree.predict(X)
        return out


@dataclass(frozen=True)
class FitSplit:
    """Positions within the train split: rows that fit the GBDT and rows sampled for generation."""
    gbdt_fit: np.ndarray
    hypernet_pool: np.ndarray


def dynamic_fit_split(n_train: int, seed: int, mode: str = "dynamic") -> FitSplit:
    """
    Split train positions between GBDT fitting and the generation pool.

    Small datasets (under 2000 rows) and mode="entire" use every row for both.
    Otherwise a random half (at most 100 000 rows) fits the GBDT and the rest
    forms the pool.
    """
    if n_train < 1:
        raise DataError("dynamic_fit_split needs at least one training row")
    everything = np.arange(n_train)
    if mode == "entire" or n_train < DYNAMIC_SPLIT_THRESHOLD:
        return FitSplit(gbdt_fit=everything, hypernet_pool=everything.copy())
    if mode != "dynamic":
        raise ConfigError(f"Unknown GBDT data split mode: {mode}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n_train)
    n_fit = min(n_train // 2, DYNAMIC_SPLIT_CAP)
    return FitSplit(gbdt_fit=np.sort(order[:n_fit]), hypernet_pool=np.sort(order[n_fit:]))


# --- Binning ---

def compute_bin_edges(X: np.ndarray, n_bins: int) -> Tuple[np.ndarray, ...]:
    """Candidate thresholds per feature: distinct values, or quantiles when there are too many."""
    edges = []
    for j in range(X.shape[1]):
        col = X[:, j]
        col = col[~np.isnan(col)]
        uniq = np.unique(col)
        if uniq.size <= n_bins:
            edges.append(uniq[:-1].copy())
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
            edges.append(np.unique(qs))
    return tuple(edges)


def _bin_codes(X: np.ndarray, edges: Tuple[np.ndarray, ...], missing_slot: int) -> np.ndarray:
    codes = np.empty(X.shape, dtype=np.int64)
    for j, e in enumerate(edges):
        col = X[:, j]
        codes[:, j] = np.searchsorted(e, col, side="left")
        codes[np.isnan(col), j] = missing_slot
    return codes


# --- Split search ---

@dataclass
class _Histogram:
    """Gradient sums and counts per (feature, bin); the last bin holds missing values."""
    grad: np.ndarray
    count: np.ndarray


def _histogram(codes: np.ndarray, g: np.ndarray, n_slots: int) -> _Histogram:
    n, d = codes.shape
    flat = (codes + np.arange(d) * n_slots).ravel()
    size = d * n_slots
    grad = np.bincount(flat, weights=np.repeat(g, d), minlength=size).reshape(d, n_slots)
    count = np.bincount(flat, minlength=size).reshape(d, n_slots).astype(np.float64)
    return _Histogram(grad=grad, count=count)


def _split_gains(hist: _Histogram, n_thresholds: np.ndarray, min_leaf: int, allow_empty: bool) -> np.ndarray:
    """
    Gain for every (feature, threshold, direction); direction 0 sends missing left.

    Unit-hessian gain: G_L^2/n_L + G_R^2/n_R - G^2/n.
    """
    g_miss = hist.grad[:, -1:]
    n_miss = hist.count[:, -1:]
    cum_g = np.cumsum(hist.grad[:, :-2], axis=1)
    cum_n = np.cumsum(hist.count[:, :-2], axis=1)
    g_tot = hist.grad.sum(axis=1, keepdims=True)
    n_tot = hist.count.sum(axis=1, keepdims=True)

    gl = np.stack([cum_g + g_miss, cum_g], axis=2)
    nl = np.stack([cum_n + n_miss, cum_n], axis=2)
    gr = g_tot[:, :, None] - gl
    nr = n_tot[:, :, None] - nl

    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(nl > 0, gl ** 2 / nl, 0.0)
        right = np.where(nr > 0, gr ** 2 / nr, 0.0)
        parent = np.where(n_tot > 0, g_tot ** 2 / n_tot, 0.0)
    gains = left + right - parent[:, :, None]

    valid = np.arange(cum_g.shape[1])[None, :] < n_thresholds[:, None]
    valid = np.broadcast_to(valid[:, :, None], gains.shape)
    if not allow_empty:
        valid = valid & (nl >= min_leaf) & (nr >= min_leaf)
    return np.where(valid, gains, -np.inf)


class _TreeBuilder:
    """Grows one tree on binned codes."""

    def __init__(self, codes: np.ndarray, edges: Tuple[np.ndarray, ...], config: GbdtConfig, n_slots: int):
        self.codes = codes
        self.edges = edges
        self.config = config
        self.n_slots = n_slots
        self.n_thresholds = np.array([e.size for e in edges], dtype=np.int64)

    def _goes_left(self, rows: np.ndarray, feature: int, bin_index: int, missing_left: bool) -> np.ndarray:
        c = self.codes[rows, feature]
        return np.where(c == self.n_slots - 1, missing_left, c <= bin_index)

    def build(self, rows: np.ndarray, g: np.ndarray) -> Tuple[Tree, float]:
        if self.config.oblivious:
            return self._build_oblivious(rows, g)
        return self._build_greedy(rows, g)

    # Greedy depth-wise tree

    def _build_greedy(self, rows: np.ndarray, g: np.ndarray) -> Tuple[Tree, float]:
        nodes: List[Dict] = []
        total_gain = [0.0]

        def grow(idx: np.ndarray, gi: np.ndarray, depth: int) -> int:
            node_id = len(nodes)
            nodes.append({})
            split = None
            if depth < self.config.depth and idx.size >= 2 * self.config.min_samples_leaf and np.ptp(gi) > 0:
                hist = _histogram(self.codes[idx], gi, self.n_slots)
                gains = _split_gains(hist, self.n_thresholds, self.config.min_samples_leaf, allow_empty=False)
                flat = int(np.argmax(gains)) if gains.size else 0
                best = gains.flat[flat] if gains.size else -np.inf
                if np.isfinite(best) and best >= -1e-12:
                    split = np.unravel_index(flat, gains.shape) + (best,)
            if split is None:
                nodes[node_id] = {"feature": -1, "value": -float(gi.mean()) if gi.size else 0.0}
                return node_id

            feature, bin_index, direction, gain = split
            total_gain[0] += float(gain)
            missing_left = direction == 0
            mask = self._goes_left(idx, feature, bin_index, missing_left)
            left_id = grow(idx[mask], gi[mask], depth + 1)
            right_id = grow(idx[~mask], gi[~mask], depth + 1)
            nodes[node_id] = {
                "feature": int(feature),
                "threshold": float(self.edges[feature][bin_index]),
                "missing_left": bool(missing_left),
                "left": left_id,
                "right": right_id,
            }
            return node_id

        grow(rows, g, 0)
        return _tree_from_nodes(nodes), total_gain[0]

    # Oblivious (symmetric) tree: one shared split per level

    def _build_oblivious(self, rows: np.ndarray, g: np.ndarray) -> Tuple[Tree, float]:
        leaf_of = np.zeros(rows.size, dtype=np.int64)
        levels: List[Tuple[int, float, bool]] = []
        total_gain = 0.0
        for _ in range(self.config.depth):
            groups = [np.nonzero(leaf_of == k)[0] for k in range(2 ** len(levels))]
            if all(grp.size == 0 or np.ptp(g[grp]) == 0 for grp in groups):
                break
            summed = None
            for grp in groups:
                if grp.size == 0:
                    continue
                hist = _histogram(self.codes[rows[grp]], g[grp], self.n_slots)
                gains = _split_gains(hist, self.n_thresholds, 1, allow_empty=True)
                summed = gains if summed is None else summed + gains
            if summed.size == 0:
                break
            flat = int(np.argmax(summed))
            best = summed.flat[flat]
            if not np.isfinite(best) or best < -1e-12:
                break
            feature, bin_index, direction = np.unravel_index(flat, summed.shape)
            total_gain += float(best)
            missing_left = direction == 0
            levels.append((int(feature), float(self.edges[feature][bin_index]), bool(missing_left)))
            goes_left = self._goes_left(rows, feature, bin_index, missing_left)
            leaf_of = leaf_of * 2 + (~goes_left).astype(np.int64)

        n_leaves = 2 ** len(levels)
        sums = np.bincount(leaf_of, weights=g, minlength=n_leaves)
        counts = np.bincount(leaf_of, minlength=n_leaves)
        values = np.where(counts > 0, -sums / np.maximum(counts, 1), 0.0)

        nodes: List[Dict] = []

        def grow(level: int, prefix: int) -> int:
            node_id = len(nodes)
            nodes.append({})
            if level == len(levels):
                nodes[node_id] = {"feature": -1, "value": float(values[prefix])}
                return node_id
            feature, threshold, missing_left = levels[level]
            left_id = grow(level + 1, prefix * 2)
            right_id = grow(level + 1, prefix * 2 + 1)
            nodes[node_id] = {
                "feature": feature,
                "threshold": threshold,
                "missing_left": missing_left,
                "left": left_id,
                "right": right_id,
            }
            return node_id

        grow(0, 0)
        return _tree_from_nodes(nodes), total_gain


def _tree_from_nodes(nodes: List[Dict]) -> Tree:
    """Pack preorder node dicts into arrays; leaf ordinals follow left-to-right order."""
    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.zeros(n)
    missing_left = np.ones(n, dtype=bool)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    value = np.zeros(n)
    leaf_ordinal = np.full(n, -1, dtype=np.int64)
    next_leaf = 0
    for i, node in enumerate(nodes):
        if node["feature"] < 0:
            value[i] = node["value"]
            leaf_ordinal[i] = next_leaf
            next_leaf += 1
        else:
            feature[i] = node["feature"]
            threshold[i] = node["threshold"]
            missing_left[i] = node["missing_left"]
            left[i] = node["left"]
            right[i] = node["right"]
    return Tree(feature, threshold, missing_left, left, right, value, leaf_ordinal)


# --- Losses ---

def _loss_kind(n_classes: int) -> str:
    if n_classes == 0:
        return SQUARED
    if n_classes == 2:
        return LOGISTIC
    return SOFTMAX


def _base_score(loss: str, y: np.ndarray, n_classes: int) -> np.ndarray:
    if loss == SQUARED:
        return np.array([float(np.mean(y))])
    if loss == LOGISTIC:
        p = np.clip(np.mean(y == 2), _PROB_CLIP, 1 - _PROB_CLIP)
        return np.array([float(np.log(p / (1 - p)))])
    priors = np.bincount(y - 1, minlength=n_classes) / y.size
    return np.log(np.clip(priors, _PROB_CLIP, None))


def _targets(loss: str, y: np.ndarray, n_classes: int) -> np.ndarray:
    if loss == SQUARED:
        return y.astype(np.float64)[:, None]
    if loss == LOGISTIC:
        return (y == 2).astype(np.float64)[:, None]
    return np.eye(n_classes)[y - 1]


def _gradients(loss: str, F: np.ndarray, target: np.ndarray) -> np.ndarray:
    if loss == SQUARED:
        return F - target
    if loss == LOGISTIC:
        return expit(F) - target
    return softmax(F, axis=1) - target


def _loss_value(loss: str, F: np.ndarray, target: np.ndarray) -> float:
    if loss == SQUARED:
        return float(np.mean((F - target) ** 2))
    if loss == LOGISTIC:
        # log(1 + e^F) - t F
        return float(np.mean(np.logaddexp(0.0, F) - target * F))
    return float(-np.mean(np.sum(target * log_softmax(F, axis=1), axis=1)))


def _check_width(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise DataError(f"GBDT expects {model.n_features} features, got {X.shape[1]}")
    return X


# --- Public operations ---

def fit_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    config: Optional[GbdtConfig] = None,
    seed: int = 0,
) -> GbdtModel:
    """
    Fit a boosted ensemble.

    n_classes is 0 for regression (squared loss), 2 for logistic loss and
    more for softmax with one tree per class per round. A single observed
    class yields single-leaf trees only.
    """
    config = config or GbdtConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n, d = X.shape
    if n < 1:
        raise DataError("fit_gbdt needs at least one row")

    loss = _loss_kind(n_classes)
    edges = compute_bin_edges(X, config.n_bins)
    n_outputs = n_classes if loss == SOFTMAX else 1

    degenerate = n_classes > 0 and np.unique(y).size < 2
    if degenerate or (n_classes == 0 and n < 2):
        logger.debug(f"Degenerate GBDT target ({n} rows); emitting single-leaf trees")
        base = _base_score(loss, y, n_classes) if n_classes != 1 else np.zeros(1)
        return GbdtModel(
            trees=tuple(Tree.single_leaf() for _ in range(n_outputs)),
            loss=loss,
            n_classes=n_classes,
            n_features=d,
            trees_per_round=n_outputs,
            n_rounds=1,
            base_score=base,
            bin_edges=edges,
            config=config,
        )

    rng = np.random.default_rng(seed)
    n_val = int(config.val_fraction * n)
    if n_val >= 1 and n - n_val >= 2:
        order = rng.permutation(n)
        val_rows, fit_rows = np.sort(order[:n_val]), np.sort(order[n_val:])
    else:
        val_rows, fit_rows = np.array([], dtype=np.int64), np.arange(n)

    max_edges = max((e.size for e in edges), default=0)
    n_slots = max_edges + 2
    codes = _bin_codes(X, edges, missing_slot=n_slots - 1)

    target = _targets(loss, y, n_classes)
    base = _base_score(loss, y[fit_rows], n_classes)
    F_fit = np.tile(base, (fit_rows.size, 1))
    F_val = np.tile(base, (val_rows.size, 1))

    builder = _TreeBuilder(codes[fit_rows], edges, config, n_slots)
    local_rows = np.arange(fit_rows.size)
    X_fit, X_val = X[fit_rows], X[val_rows]

    trees: List[Tree] = []
    history: List[float] = []
    best_round, best_loss = 0, np.inf
    for round_index in range(1, config.max_rounds + 1):
        grads = _gradients(loss, F_fit, target[fit_rows])
        for k in range(n_outputs):
            tree, _ = builder.build(local_rows, grads[:, k])
            trees.append(tree)
            F_fit[:, k] += config.learning_rate * tree.predict(X_fit)
            if val_rows.size:
                F_val[:, k] += config.learning_rate * tree.predict(X_val)

        if not val_rows.size:
            best_round = round_index
            continue
        val_loss = _loss_value(loss, F_val, target[val_rows])
        history.append(val_loss)
        if val_loss < best_loss:
            best_round, best_loss = round_index, val_loss
        elif round_index - best_round >= config.patience:
            logger.debug(f"GBDT early stop at round {round_index}, best round {best_round}")
            break

    trees = trees[: best_round * n_outputs]
    return GbdtModel(
        trees=tuple(trees),
        loss=loss,
        n_classes=n_classes,
        n_features=d,
        trees_per_round=n_outputs,
        n_rounds=best_round,
        base_score=base,
        bin_edges=edges,
        config=config,
        val_history=tuple(history),
    )


def leaf_indices(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """Per-tree leaf ordinals, shape (rows, trees); a 1-D row gives a 1-D vector."""
    single = np.asarray(X).ndim == 1
    X = _check_width(model, X)
    out = np.empty((X.shape[0], model.n_trees), dtype=np.int64)
    for t, tree in enumerate(model.trees):
        out[:, t] = tree.apply(X)
    return out[0] if single else out


def embed(model: GbdtModel, X: np.ndarray) -> sparse.csr_matrix:
    """Concatenated leaf one-hots, N x M sparse binary."""
    X = _check_width(model, X)
    leaves = leaf_indices(model, X)
    offsets = np.concatenate([[0], np.cumsum(model.leaf_counts)[:-1]])
    cols = (leaves + offsets[None, :]).ravel()
    rows = np.repeat(np.arange(X.shape[0]), model.n_trees)
    data = np.ones(cols.size)
    return sparse.csr_matrix((data, (rows, cols)), shape=(X.shape[0], model.n_leaves))


def predict_gbdt(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """Class probabilities (N x K) or regression values (N,)."""
    F = model.raw_predict(X)
    if model.loss == SQUARED:
        return F[:, 0]
    if model.loss == LOGISTIC:
        p = expit(F[:, 0])
        return np.column_stack([1 - p, p])
    return softmax(F, axis=1)


# --- Serialization to named tensors ---

def gbdt_to_state(model: GbdtModel, prefix: str = "gbdt") -> Tuple[Dict, Dict[str, np.ndarray]]:
    """Metadata dict and named arrays describing a fitted model."""
    meta = {
        "loss": model.loss,
        "n_classes": model.n_classes,
        "n_features": model.n_features,
        "trees_per_round": model.trees_per_round,
        "n_rounds": model.n_rounds,
        "n_trees": model.n_trees,
        "config": asdict(model.config),
        "val_history": list(model.val_history),
    }
    tensors = {f"{prefix}.base_score": model.base_score}
    for j, e in enumerate(model.bin_edges):
        tensors[f"{prefix}.edges.{j}"] = e
    for t, tree in enumerate(model.trees):
        for attr in ("feature", "threshold", "missing_left", "left", "right", "value", "leaf_ordinal"):
            tensors[f"{prefix}.tree.{t}.{attr}"] = getattr(tree, attr)
    return meta, tensors


def gbdt_from_state(meta: Dict, tensors: Dict[str, np.ndarray], prefix: str = "gbdt") -> GbdtModel:
    trees = []
    for t in range(meta["n_trees"]):
        p = f"{prefix}.tree.{t}."
        trees.append(Tree(
            feature=tensors[p + "feature"].astype(np.int64),
            threshold=tensors[p + "threshold"].astype(np.float64),
            missing_left=tensors[p + "missing_left"].astype(bool),
            left=tensors[p + "left"].astype(np.int64),
            right=tensors[p + "right"].astype(np.int64),
            value=tensors[p + "value"].astype(np.float64),
            leaf_ordinal=tensors[p + "leaf_ordinal"].astype(np.int64),
        ))
    edges = tuple(tensors[f"{prefix}.edges.{j}"] for j in range(meta["n_features"]))
    return GbdtModel(
        trees=tuple(trees),
        loss=meta["loss"],
        n_classes=meta["n_classes"],
        n_features=meta["n_features"],
        trees_per_round=meta["trees_per_round"],
        n_rounds=meta["n_rounds"],
        base_score=tensors[f"{prefix}.base_score"],
        bin_edges=edges,
        config=GbdtConfig(**meta["config"]),
        val_history=tuple(meta["val_history"]),
    )
