"""Random draws from the inference hyperparameter search space."""

import logging
from typing import List

import numpy as np

from hypertab.models import (
    BATCH_CHOICES,
    DROPOUT_CHOICES,
    FINETUNE_STEP_CHOICES,
    GBDT_ESTIMATOR_CHOICES,
    N_ENS_CHOICES,
    PREPROCESSING_CHOICES,
    HpSample,
)

logger = logging.getLogger(__name__)

FINETUNE_LR_RANGE = (1e-6, 1e-2)
GBDT_LR_RANGE = (0.01, 0.5)
TAU_RANGE = (0.5, 3.0)
ALPHA_RANGE = (0.0, 1.0)


def default_hyperparams() -> HpSample:
    return HpSample()


def _log_uniform(rng: np.random.Generator, low: float, high: float) -> float:
    return float(np.exp(rng.uniform(np.log(low), np.log(high))))


def _clamp(value: float, bounds) -> float:
    return min(max(value, bounds[0]), bounds[1])


def _pick(rng: np.random.Generator, choices):
    return choices[int(rng.integers(len(choices)))]


def sample_hyperparams(seed: int) -> HpSample:
    """Independent draw per field: categoricals uniform, rates log-uniform, tau and alpha uniform."""
    rng = np.random.default_rng(seed)
    return HpSample(
        preprocessing=_pick(rng, PREPROCESSING_CHOICES),
        batch_size=_pick(rng, BATCH_CHOICES),
        n_ens=_pick(rng, N_ENS_CHOICES),
        feature_bagging=bool(rng.integers(2)),
        do_finetune=bool(rng.integers(2)),
        dropout=_pick(rng, DROPOUT_CHOICES),
        finetune_steps=_pick(rng, FINETUNE_STEP_CHOICES),
        finetune_lr=_clamp(_log_uniform(rng, *FINETUNE_LR_RANGE), FINETUNE_LR_RANGE),
        finetune_data=_pick(rng, ("bootstrap", "entire")),
        gbdt_data_split=_pick(rng, ("dynamic", "entire")),
        gbdt_per_predictor=bool(rng.integers(2)),
        gbdt_estimators=_pick(rng, GBDT_ESTIMATOR_CHOICES),
        gbdt_lr=_clamp(_log_uniform(rng, *GBDT_LR_RANGE), GBDT_LR_RANGE),
        do_retrieval=bool(rng.integers(2)),
        tau=float(rng.uniform(*TAU_RANGE)),
        alpha=float(rng.uniform(*ALPHA_RANGE)),
    )


def hpo_plan(n_random: int, seed: int = 0) -> List[HpSample]:
    """The default configuration followed by n_random seeded draws."""
    samples = [default_hyperparams()]
    samples.extend(sample_hyperparams(seed * 1_000_003 + i) for i in range(n_random))
    logger.debug(f"HPO plan: 1 default + {n_random} random configurations")
    return samples
