"""Finite-difference check of the full meta-training gradient path."""

import logging
import time
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from hypertab.errors import ConfigError
from hypertab.services.autodiff import Tape, finite_diff_check, flatten_params, grad, unflatten_params
from hypertab.services.hypernet import (
    HyperNetConfig,
    HyperNetwork,
    forward_on_tape,
    generate_on_tape,
    retrieval_on_tape,
)
from hypertab.services.tabular import one_hot_labels

logger = logging.getLogger(__name__)


@dataclass
class GradcheckResult:
    success: bool
    max_relative_error: float
    n_params: int
    tolerance: float
    mutation: Optional[str] = None
    duration_seconds: float = 0.0


@dataclass(frozen=True)
class GradcheckProblem:
    """A fixed toy draw: generation and gradient batches with balanced labels."""
    X_gen: np.ndarray
    labels_gen: np.ndarray
    X_grad: np.ndarray
    labels_grad: np.ndarray
    n_classes: int


def make_problem(d_main: int, n_classes: int, n_gen: int, n_grad: int, seed: int = 0) -> GradcheckProblem:
    if n_gen < n_classes:
        raise ConfigError(f"n_gen={n_gen} cannot cover {n_classes} classes")
    rng = np.random.default_rng(seed)
    return GradcheckProblem(
        X_gen=rng.normal(size=(n_gen, d_main)),
        labels_gen=rng.permutation(np.arange(n_gen) % n_classes),
        X_grad=rng.normal(size=(n_grad, d_main)),
        labels_grad=rng.integers(n_classes, size=n_grad),
        n_classes=n_classes,
    )


def pipeline_loss(
    params: Dict[str, np.ndarray],
    config: HyperNetConfig,
    problem: GradcheckProblem,
    alpha: float,
    tau: float,
    mutations: Sequence[str] = (),
    with_grad: bool = True,
) -> Tuple[float, Optional[Dict[str, np.ndarray]]]:
    """Cross-entropy of combined logits on the gradient batch, and its gradient w.r.t. phi."""
    tape = Tape(mutations=mutations)
    phi = {k: tape.param(v, k) for k, v in sorted(params.items())}
    x_gen = tape.constant(problem.X_gen)
    K = problem.n_classes
    theta = generate_on_tape(tape, phi, config, x_gen, labels=problem.labels_gen, n_classes=K)
    H_grad, logits = forward_on_tape(tape, theta, tape.constant(problem.X_grad))
    if alpha > 0:
        H_gen, _ = forward_on_tape(tape, theta, x_gen)
        ret = retrieval_on_tape(tape, H_grad, H_gen, one_hot_labels(problem.labels_gen + 1, K), tau)
        logits = tape.mix(logits, ret, alpha)
    loss = tape.ce_loss(logits, one_hot_labels(problem.labels_grad + 1, K))
    if not with_grad:
        return float(loss.value), None
    return float(loss.value), grad(tape, loss)


def run_gradcheck(
    d_main: int = 8,
    hidden: int = 16,
    k_max: int = 4,
    n_classes: int = 3,
    n_gen: int = 12,
    n_grad: int = 10,
    alpha: float = 0.5,
    tau: float = 2.0,
    tolerance: float = 1e-5,
    mutation: Optional[str] = None,
    seed: int = 0,
) -> GradcheckResult:
    """
    Compare the analytic phi-gradient of the whole pipeline with central differences.

    A mutation corrupts the backward pass on purpose; the check must then fail.
    """
    started = time.monotonic()
    config = HyperNetConfig(d_main=d_main, hidden=hidden, k_max=k_max)
    net = HyperNetwork.init(config, seed=seed)
    problem = make_problem(d_main, n_classes, n_gen, n_grad, seed=seed + 1)
    mutations = (mutation,) if mutation else ()

    _, analytic = pipeline_loss(net.params, config, problem, alpha, tau, mutations)
    p0 = flatten_params(net.params)

    def f(p: np.ndarray) -> float:
        return pipeline_loss(unflatten_params(p, net.params), config, problem, alpha, tau, with_grad=False)[0]

    error = finite_diff_check(f, p0, flatten_params(analytic), seed=seed)
    result = GradcheckResult(
        success=error < tolerance,
        max_relative_error=error,
        n_params=int(p0.size),
        tolerance=tolerance,
        mutation=mutation,
        duration_seconds=time.monotonic() - started,
    )
    level = logging.INFO if result.success else logging.ERROR
    logger.log(level, f"Gradient check over {result.n_params} parameters: max relative error {error:.3e} (tolerance {tolerance:g})")
    return result
