"""
Fixed-size embedding tail: random ReLU features, PCA and column standardization.

Any initial representation of width m maps to d_main columns, which is what
lets one hypernetwork serve tasks of arbitrary width.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Tuple

import numpy as np

from hypertab.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_RANDOM_FEATURES = 2 ** 15
DEFAULT_D_MAIN = 512
EPSILON = 1e-6

# Eigenvalues below this fraction of the largest count as zero.
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class ProjectionParams:
    """Frozen random-feature map, PCA basis and standardization statistics.

    omega is not stored; it is regenerated from (seed, m, r).
    """
    seed: int
    m: int
    r: int
    d_main: int
    mu_rf: np.ndarray
    basis: np.ndarray
    col_mean: np.ndarray
    col_std: np.ndarray
    eps: float = EPSILON

    @cached_property
    def omega(self) -> np.ndarray:
        return sample_omega(self.seed, self.m, self.r)

    @property
    def rank(self) -> int:
        """Number of non-degenerate principal components."""
        return int(np.count_nonzero(np.any(self.basis != 0.0, axis=0)))


def sample_omega(seed: int, m: int, r: int) -> np.ndarray:
    """m x r matrix with entries N(0, 2/r)."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(2.0 / r), size=(m, r))


def _random_features(Psi: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return np.maximum(Psi @ omega, 0.0)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _principal_components(Zc: np.ndarray, k: int) -> np.ndarray:
    """
    Top-k principal directions of centered rows, as an r x k matrix.

    Uses the r x r covariance when r <= N and the N x N Gram matrix otherwise.
    Directions past the numerical rank are zero columns.
    """
    n, r = Zc.shape
    U = np.zeros((r, k))
    if r <= n:
        vals, vecs = np.linalg.eigh(Zc.T @ Zc)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        top = vals[0] if vals.size else 0.0
        keep = [i for i in range(min(k, vals.size)) if vals[i] > _RANK_TOL * top and vals[i] > 0]
        for i in keep:
            U[:, i] = vecs[:, i]
    else:
        vals, vecs = np.linalg.eigh(Zc @ Zc.T)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        top = vals[0] if vals.size else 0.0
        keep = [i for i in range(min(k, vals.size)) if vals[i] > _RANK_TOL * top and vals[i] > 0]
        for i in keep:
            U[:, i] = Zc.T @ vecs[:, i] / np.sqrt(vals[i])
    return _fix_signs(U)


def fit_projection(
    Psi_fit: np.ndarray,
    r: int = DEFAULT_RANDOM_FEATURES,
    d_main: int = DEFAULT_D_MAIN,
    seed: int = 0,
    eps: float = EPSILON,
) -> ProjectionParams:
    """Fit the random-feature/PCA/standardization tail on a batch of rows."""
    Psi_fit = np.asarray(Psi_fit, dtype=np.float64)
    if Psi_fit.ndim != 2 or Psi_fit.shape[0] < 2:
        raise DataError(f"fit_projection needs at least 2 rows, got shape {Psi_fit.shape}")
    n, m = Psi_fit.shape

    omega = sample_omega(seed, m, r)
    Z = _random_features(Psi_fit, omega)
    mu_rf = Z.mean(axis=0)
    Zc = Z - mu_rf
    U = _principal_components(Zc, d_main)

    P = Zc @ U
    col_mean = P.mean(axis=0)
    col_std = P.std(axis=0)
    degenerate = ~np.any(U != 0.0, axis=0)
    col_mean[degenerate] = 0.0
    col_std[degenerate] = 1.0

    params = ProjectionParams(
        seed=seed, m=m, r=r, d_main=d_main,
        mu_rf=mu_rf, basis=U, col_mean=col_mean, col_std=col_std, eps=eps,
    )
    params.__dict__["omega"] = omega
    if params.rank < d_main:
        logger.debug(f"Projection rank {params.rank} < d_main {d_main}; padding with zero components")
    return params


def apply_projection(params: ProjectionParams, Psi: np.ndarray) -> np.ndarray:
    """Map rows of width m to standardized d_main-dimensional embeddings."""
    Psi = np.asarray(Psi, dtype=np.float64)
    if Psi.ndim != 2 or Psi.shape[1] != params.m:
        raise DataError(f"apply_projection: expected width {params.m}, got shape {Psi.shape}")
    Z = _random_features(Psi, params.omega) - params.mu_rf
    P = Z @ params.basis
    return (P - params.col_mean) / np.sqrt(params.col_std ** 2 + params.eps)


def projection_to_state(params: ProjectionParams, prefix: str = "proj") -> Tuple[Dict, Dict[str, np.ndarray]]:
    meta = {"seed": params.seed, "m": params.m, "r": params.r, "d_main": params.d_main, "eps": params.eps}
    tensors = {
        f"{prefix}.mu_rf": params.mu_rf,
        f"{prefix}.basis": params.basis,
        f"{prefix}.col_mean": params.col_mean,
        f"{prefix}.col_std": params.col_std,
    }
    return meta, tensors


def projection_from_state(meta: Dict, tensors: Dict[str, np.ndarray], prefix: str = "proj") -> ProjectionParams:
    return ProjectionParams(
        seed=meta["seed"],
        m=meta["m"],
        r=meta["r"],
        d_main=meta["d_main"],
        eps=meta["eps"],
        mu_rf=tensors[f"{prefix}.mu_rf"],
        basis=tensors[f"{prefix}.basis"],
        col_mean=tensors[f"{prefix}.col_mean"],
        col_std=tensors[f"{prefix}.col_std"],
    )
