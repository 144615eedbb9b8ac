"""
Robust preprocessing and composition of the initial feature map.

Variants: R (robust path only), X and C (GBDT leaf one-hots from the two
tree flavors), RX and RC (robust columns followed by leaf one-hots).
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from hypertab.errors import ConfigError, DataError
from hypertab.services.gbdt import (
    GbdtConfig,
    GbdtModel,
    embed,
    fit_gbdt,
    flavor_config,
    gbdt_from_state,
    gbdt_to_state,
)
from hypertab.services.tabular import Schema

logger = logging.getLogger(__name__)

CLIP_BOUND = 3.0
PSI_VARIANTS = ("R", "X", "C", "RX", "RC")

# Values this large are clipped before squaring so the smooth clip stays finite.
_Z_LIMIT = 1e100


@dataclass(frozen=True)
class RobustScalerState:
    """Per-column centering/scaling for numeric columns and one-hot layout for categoricals."""
    is_categorical: np.ndarray
    median: np.ndarray
    scale: np.ndarray
    vocab_sizes: np.ndarray
    clip: float = CLIP_BOUND

    @property
    def n_features(self) -> int:
        return int(self.is_categorical.size)

    @property
    def block_widths(self) -> np.ndarray:
        return np.where(self.is_categorical, self.vocab_sizes, 1)

    @property
    def width(self) -> int:
        """Output width m_R: numeric columns plus vocabulary sizes."""
        return int(self.block_widths.sum())


def smooth_clip(z: np.ndarray, bound: float = CLIP_BOUND) -> np.ndarray:
    """z / sqrt(1 + (z/B)^2): odd, increasing, bounded by B."""
    z = np.clip(z, -_Z_LIMIT, _Z_LIMIT)
    return z / np.sqrt(1.0 + (z / bound) ** 2)


def robust_scale(values: np.ndarray) -> float:
    """Interquartile range, falling back to standard deviation, then 1."""
    if values.size == 0:
        return 1.0
    q25, q75 = np.quantile(values, [0.25, 0.75])
    scale = float(q75 - q25)
    if scale > 0:
        return scale
    scale = float(np.std(values))
    return scale if scale > 0 else 1.0


def fit_robust(X_train: np.ndarray, schema: Schema, clip: float = CLIP_BOUND) -> RobustScalerState:
    """Median and robust scale per numeric column; categorical layout from the schema."""
    X_train = np.asarray(X_train, dtype=np.float64)
    if X_train.ndim != 2 or X_train.shape[0] < 1:
        raise DataError("fit_robust needs at least one row")
    if X_train.shape[1] != schema.n_features:
        raise DataError(f"fit_robust: table has {X_train.shape[1]} columns, schema has {schema.n_features}")

    d = schema.n_features
    is_cat = np.array([c.is_categorical for c in schema.columns], dtype=bool)
    vocab = np.array([len(c.vocabulary) for c in schema.columns], dtype=np.int64)
    median = np.zeros(d)
    scale = np.ones(d)
    for j in np.nonzero(~is_cat)[0]:
        col = X_train[:, j]
        col = col[np.isfinite(col)]
        if col.size == 0:
            continue
        median[j] = float(np.median(col))
        scale[j] = robust_scale(col)
    return RobustScalerState(is_categorical=is_cat, median=median, scale=scale, vocab_sizes=vocab, clip=clip)


def apply_robust(state: RobustScalerState, X: np.ndarray) -> np.ndarray:
    """
    Transform a table to the robust representation.

    Numeric: missing imputed as 0, then (x - median) / scale, then smooth clip.
    Categorical: one-hot over the vocabulary; unknown and missing codes give
    an all-zero segment.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != state.n_features:
        raise DataError(f"apply_robust: expected {state.n_features} columns, got {X.shape}")

    n = X.shape[0]
    out = np.zeros((n, state.width))
    offsets = np.concatenate([[0], np.cumsum(state.block_widths)[:-1]])
    for j in range(state.n_features):
        col = X[:, j]
        start = offsets[j]
        if state.is_categorical[j]:
            size = state.vocab_sizes[j]
            valid = np.isfinite(col) & (col >= 0) & (col < size)
            rows = np.nonzero(valid)[0]
            out[rows, start + col[rows].astype(np.int64)] = 1.0
        else:
            x = np.where(np.isnan(col), 0.0, col)
            out[:, start] = smooth_clip((x - state.median[j]) / state.scale[j], state.clip)
    return out


@dataclass(frozen=True)
class PsiVariant:
    """
    Fitted initial feature map for one predictor.

    robust_columns / gbdt_columns select the raw columns each component was
    fitted on (feature bagging may restrict either).
    """
    tag: str
    robust: Optional[RobustScalerState] = None
    gbdt: Optional[GbdtModel] = None
    robust_columns: Optional[np.ndarray] = None
    gbdt_columns: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tag not in PSI_VARIANTS:
            raise ConfigError(f"Unknown preprocessing variant: {self.tag}")

    @property
    def uses_robust(self) -> bool:
        return "R" in self.tag

    @property
    def uses_gbdt(self) -> bool:
        return self.tag != "R"

    @property
    def flavor(self) -> Optional[str]:
        return self.tag[-1] if self.uses_gbdt else None

    @property
    def width(self) -> int:
        width = 0
        if self.uses_robust and self.robust is not None:
            width += self.robust.width
        if self.uses_gbdt and self.gbdt is not None:
            width += self.gbdt.n_leaves
        return width


def _columns(X: np.ndarray, columns: Optional[np.ndarray]) -> np.ndarray:
    return X if columns is None else X[:, columns]


def build_psi(variant: PsiVariant, X: np.ndarray) -> np.ndarray:
    """Dense N x m matrix: robust block, then GBDT leaf one-hots, as the tag requires."""
    X = np.asarray(X, dtype=np.float64)
    blocks = []
    if variant.uses_robust:
        if variant.robust is None:
            raise ConfigError(f"Variant {variant.tag} is missing its robust scaler state")
        blocks.append(apply_robust(variant.robust, _columns(X, variant.robust_columns)))
    if variant.uses_gbdt:
        if variant.gbdt is None:
            raise ConfigError(f"Variant {variant.tag} is missing its GBDT state")
        blocks.append(embed(variant.gbdt, _columns(X, variant.gbdt_columns)).toarray())
    return np.hstack(blocks) if len(blocks) > 1 else blocks[0]


def fit_psi(
    tag: str,
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    schema: Schema,
    gbdt_config: Optional[GbdtConfig] = None,
    seed: int = 0,
    robust_columns: Optional[Sequence[int]] = None,
    gbdt_columns: Optional[Sequence[int]] = None,
    gbdt: Optional[GbdtModel] = None,
) -> PsiVariant:
    """
    Fit the components a variant needs on the rows given.

    A pre-fitted GBDT may be passed to share one tree ensemble between
    several predictors.
    """
    if tag not in PSI_VARIANTS:
        raise ConfigError(f"Unknown preprocessing variant: {tag}")
    X = np.asarray(X, dtype=np.float64)
    r_cols = None if robust_columns is None else np.asarray(robust_columns, dtype=np.int64)
    g_cols = None if gbdt_columns is None else np.asarray(gbdt_columns, dtype=np.int64)

    robust = None
    if "R" in tag:
        sub_schema = schema if r_cols is None else schema.subset(r_cols)
        robust = fit_robust(_columns(X, r_cols), sub_schema)

    if tag != "R" and gbdt is None:
        config = gbdt_config or flavor_config(tag[-1])
        gbdt = fit_gbdt(_columns(X, g_cols), y, n_classes, config, seed=seed)
        logger.debug(f"Fitted {tag[-1]} GBDT: {gbdt.n_trees} trees, {gbdt.n_leaves} leaves")

    return PsiVariant(
        tag=tag,
        robust=robust,
        gbdt=gbdt if tag != "R" else None,
        robust_columns=r_cols,
        gbdt_columns=g_cols,
    )


# --- Serialization to named tensors ---

def psi_to_state(variant: PsiVariant, prefix: str = "psi") -> Tuple[Dict, Dict[str, np.ndarray]]:
    meta: Dict = {"tag": variant.tag}
    tensors: Dict[str, np.ndarray] = {}
    if variant.robust is not None:
        meta["clip"] = variant.robust.clip
        tensors[f"{prefix}.robust.is_categorical"] = variant.robust.is_categorical.astype(np.int64)
        tensors[f"{prefix}.robust.median"] = variant.robust.median
        tensors[f"{prefix}.robust.scale"] = variant.robust.scale
        tensors[f"{prefix}.robust.vocab_sizes"] = variant.robust.vocab_sizes
    if variant.robust_columns is not None:
        tensors[f"{prefix}.robust_columns"] = variant.robust_columns
    if variant.gbdt_columns is not None:
        tensors[f"{prefix}.gbdt_columns"] = variant.gbdt_columns
    if variant.gbdt is not None:
        gbdt_meta, gbdt_tensors = gbdt_to_state(variant.gbdt, prefix=f"{prefix}.gbdt")
        meta["gbdt"] = gbdt_meta
        tensors.update(gbdt_tensors)
    return meta, tensors


def psi_from_state(meta: Dict, tensors: Dict[str, np.ndarray], prefix: str = "psi") -> PsiVariant:
    robust = None
    if f"{prefix}.robust.median" in tensors:
        robust = RobustScalerState(
            is_categorical=tensors[f"{prefix}.robust.is_categorical"].astype(bool),
            median=tensors[f"{prefix}.robust.median"],
            scale=tensors[f"{prefix}.robust.scale"],
            vocab_sizes=tensors[f"{prefix}.robust.vocab_sizes"].astype(np.int64),
            clip=meta.get("clip", CLIP_BOUND),
        )
    gbdt = gbdt_from_state(meta["gbdt"], tensors, prefix=f"{prefix}.gbdt") if "gbdt" in meta else None
    return PsiVariant(
        tag=meta["tag"],
        robust=robust,
        gbdt=gbdt,
        robust_columns=tensors.get(f"{prefix}.robust_columns"),
        gbdt_columns=tensors.get(f"{prefix}.gbdt_columns"),
    )
