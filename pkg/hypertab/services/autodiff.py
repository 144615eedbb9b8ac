"""
Reverse-mode differentiation over a fixed operator set.

A Tape records nodes in execution order; grad() walks them backwards and
accumulates gradients into every node that depends on a marked parameter.
"""

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from hypertab.errors import NumericError, UnmarkedTensorError

logger = logging.getLogger(__name__)

ROW_NORM_EPS = 1e-12

# Operator mutations used to demonstrate that the gradient checks are sensitive.
MUTATIONS = ("relu_mask",)


class Node:
    """A value on the tape plus the closure that maps its gradient to its parents."""

    __slots__ = ("value", "grad", "parents", "backward", "name", "is_param", "needs_grad")

    def __init__(self, value, parents=(), backward=None, name=None, is_param=False):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward = backward
        self.name = name
        self.is_param = is_param
        self.needs_grad = is_param or any(p.needs_grad for p in self.parents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(name={self.name!r}, shape={self.value.shape}, param={self.is_param})"


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records a computation over dense arrays."""

    def __init__(self, dtype=np.float64, mutations: Iterable[str] = ()):
        self.dtype = dtype
        self.mutations = frozenset(mutations)
        unknown = self.mutations - set(MUTATIONS)
        if unknown:
            raise NumericError(f"Unknown tape mutations: {sorted(unknown)}")
        self.nodes: List[Node] = []

    def _record(self, value, parents=(), backward=None, name=None, is_param=False) -> Node:
        node = Node(value, parents, backward, name, is_param)
        self.nodes.append(node)
        return node

    # Leaves

    def param(self, value, name: str) -> Node:
        """A tensor gradients can be requested for."""
        return self._record(np.array(value, dtype=self.dtype), name=name, is_param=True)

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._record(np.asarray(value, dtype=self.dtype), name=name)

    # Linear algebra

    def affine(self, x: Node, W: Node, b: Optional[Node] = None) -> Node:
        """x @ W.T + b."""
        out = x.value @ W.value.T
        if b is not None:
            out = out + b.value

        def backward(g):
            grads = [g @ W.value, g.T @ x.value]
            if b is not None:
                grads.append(_unbroadcast(g, b.value.shape))
            return grads

        parents = (x, W) if b is None else (x, W, b)
        return self._record(out, parents, backward, "affine")

    def matmul(self, a: Node, b: Node, transpose_b: bool = False) -> Node:
        bv = b.value.T if transpose_b else b.value
        out = a.value @ bv

        def backward(g):
            ga = g @ bv.T
            gb = a.value.T @ g
            return ga, (gb.T if transpose_b else gb)

        return self._record(out, (a, b), backward, "matmul")

    # Elementwise

    def relu(self, x: Node) -> Node:
        mask = x.value > 0
        out = np.where(mask, x.value, 0.0).astype(self.dtype)
        drop_mask = "relu_mask" in self.mutations

        def backward(g):
            return (g if drop_mask else g * mask,)

        return self._record(out, (x,), backward, "relu")

    def add(self, a: Node, b: Node) -> Node:
        out = a.value + b.value

        def backward(g):
            return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

        return self._record(out, (a, b), backward, "add")

    def scale(self, x: Node, c: float) -> Node:
        def backward(g):
            return (g * c,)

        return self._record(x.value * c, (x,), backward, "scale")

    def add_scalar(self, x: Node, c: float) -> Node:
        def backward(g):
            return (g,)

        return self._record(x.value + c, (x,), backward, "add_scalar")

    def mul_const(self, x: Node, c: np.ndarray) -> Node:
        """Elementwise product with a constant array (dropout masks)."""
        c = np.asarray(c, dtype=self.dtype)

        def backward(g):
            return (_unbroadcast(g * c, x.value.shape),)

        return self._record(x.value * c, (x,), backward, "mul_const")

    def mix(self, a: Node, b: Node, alpha: float) -> Node:
        """(1 - alpha) * a + alpha * b; the endpoints return an operand unchanged."""
        if alpha == 0.0:
            out = a.value.copy()
        elif alpha == 1.0:
            out = b.value.copy()
        else:
            out = (1.0 - alpha) * a.value + alpha * b.value

        def backward(g):
            return (1.0 - alpha) * g, alpha * g

        return self._record(out, (a, b), backward, "mix")

    # Shape and pooling

    def concat(self, xs: Sequence[Node], axis: int = 1) -> Node:
        out = np.concatenate([x.value for x in xs], axis=axis)
        bounds = np.cumsum([0] + [x.value.shape[axis] for x in xs])

        def backward(g):
            return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))]

        return self._record(out, tuple(xs), backward, "concat")

    def reshape(self, x: Node, shape: Tuple[int, ...]) -> Node:
        def backward(g):
            return (g.reshape(x.value.shape),)

        return self._record(x.value.reshape(shape), (x,), backward, "reshape")

    def slice_cols(self, x: Node, start: int, stop: int) -> Node:
        def backward(g):
            full = np.zeros_like(x.value)
            full[:, start:stop] = g
            return (full,)

        return self._record(x.value[:, start:stop], (x,), backward, "slice_cols")

    def gather_rows(self, x: Node, index: np.ndarray) -> Node:
        index = np.asarray(index, dtype=np.int64)

        def backward(g):
            full = np.zeros_like(x.value)
            np.add.at(full, index, g)
            return (full,)

        return self._record(x.value[index], (x,), backward, "gather_rows")

    def mean_rows(self, x: Node) -> Node:
        """Mean over rows, keeping a leading axis of size 1."""
        n = x.value.shape[0]

        def backward(g):
            return (np.broadcast_to(g / n, x.value.shape).copy(),)

        return self._record(x.value.mean(axis=0, keepdims=True), (x,), backward, "mean_rows")

    def group_mean(self, x: Node, groups: np.ndarray, n_groups: int) -> Node:
        """
        Per-group row means, shape (n_groups, cols).

        groups holds 0-based group ids; a group with no rows gets the mean of
        all rows.
        """
        P = group_mean_matrix(groups, n_groups, self.dtype)

        def backward(g):
            return (P.T @ g,)

        return self._record(P @ x.value, (x,), backward, "group_mean")

    # Normalization

    def row_l2_normalize(self, x: Node) -> Node:
        """Each row divided by (its L2 norm + 1e-12)."""
        norm = np.sqrt(np.sum(x.value ** 2, axis=1, keepdims=True))
        s = norm + ROW_NORM_EPS
        out = x.value / s

        def backward(g):
            dot = np.sum(g * x.value, axis=1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                corr = np.where(norm > 0, dot / (s ** 2 * norm), 0.0)
            return (g / s - x.value * corr,)

        return self._record(out, (x,), backward, "row_l2_normalize")

    def standardize_rows(self, x: Node, eps: float = 1e-6) -> Node:
        """(x - row mean) / sqrt(row variance + eps)."""
        mu = x.value.mean(axis=1, keepdims=True)
        sigma = np.sqrt(x.value.var(axis=1, keepdims=True) + eps)
        out = (x.value - mu) / sigma

        def backward(g):
            gm = g.mean(axis=1, keepdims=True)
            gy = (g * out).mean(axis=1, keepdims=True)
            return ((g - gm - out * gy) / sigma,)

        return self._record(out, (x,), backward, "standardize_rows")

    # Losses

    def ce_loss(self, logits: Node, targets: np.ndarray) -> Node:
        """Mean softmax cross-entropy against one-hot targets."""
        targets = np.asarray(targets, dtype=self.dtype)
        if targets.shape != logits.value.shape:
            raise NumericError(f"ce_loss: logits {logits.value.shape} vs targets {targets.shape}")
        b = logits.value.shape[0]
        out = -np.sum(targets * log_softmax(logits.value, axis=1)) / b

        def backward(g):
            return (g * (softmax(logits.value, axis=1) - targets) / b,)

        return self._record(np.asarray(out, dtype=self.dtype), (logits,), backward, "ce_loss")

    def mse_loss(self, pred: Node, y: np.ndarray) -> Node:
        """Mean squared residual."""
        y = np.asarray(y, dtype=self.dtype).reshape(pred.value.shape)
        diff = pred.value - y
        out = np.mean(diff ** 2)

        def backward(g):
            return (g * 2.0 * diff / diff.size,)

        return self._record(np.asarray(out, dtype=self.dtype), (pred,), backward, "mse_loss")

    def half_sq_norm(self, x: Node) -> Node:
        """0.5 * ||x||^2."""
        def backward(g):
            return (g * x.value,)

        return self._record(np.asarray(0.5 * np.sum(x.value ** 2), dtype=self.dtype), (x,), backward, "half_sq_norm")

    # Reverse pass

    def backward(self, loss: Node) -> None:
        if loss.value.size != 1:
            raise NumericError(f"Loss must be a scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward is None or not node.needs_grad:
                continue
            for parent, g in zip(node.parents, node.backward(node.grad)):
                if g is None or not parent.needs_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def group_mean_matrix(groups: np.ndarray, n_groups: int, dtype=np.float64) -> np.ndarray:
    """n_groups x N averaging matrix; empty groups average every row."""
    groups = np.asarray(groups, dtype=np.int64)
    n = groups.size
    P = np.zeros((n_groups, n), dtype=dtype)
    P[groups, np.arange(n)] = 1.0
    counts = P.sum(axis=1, keepdims=True)
    P = np.where(counts > 0, P / np.maximum(counts, 1.0), 1.0 / n)
    return P.astype(dtype)


def grad(tape: Tape, loss: Node, wrt: Optional[Sequence[Node]] = None) -> Dict[str, np.ndarray]:
    """
    Gradients of a scalar loss, keyed by parameter name.

    With wrt=None every marked parameter on the tape is returned. Parameters
    the loss does not depend on get zero gradients.
    """
    targets = [n for n in tape.nodes if n.is_param] if wrt is None else list(wrt)
    for node in targets:
        if not node.is_param:
            raise UnmarkedTensorError(f"Gradient requested for unmarked tensor {node!r}")
    tape.backward(loss)
    return {
        node.name: (node.grad.copy() if node.grad is not None else np.zeros_like(node.value))
        for node in targets
    }


# --- Parameter vectors ---

def flatten_params(params: Dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate parameters in sorted-name order."""
    return np.concatenate([np.ravel(params[k]) for k in sorted(params)])


def unflatten_params(vector: np.ndarray, template: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    out = {}
    offset = 0
    for key in sorted(template):
        size = template[key].size
        out[key] = np.asarray(vector[offset:offset + size]).reshape(template[key].shape).copy()
        offset += size
    if offset != vector.size:
        raise NumericError(f"Parameter vector has {vector.size} entries, template needs {offset}")
    return out


# --- Finite-difference oracle ---

def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    p: np.ndarray,
    analytic: np.ndarray,
    step: float = 1e-5,
    max_coordinates: int = 1000,
    n_directions: int = 64,
    n_sampled_coordinates: int = 256,
    floor: float = 1e-4,
    seed: int = 0,
) -> float:
    """
    Largest relative error between an analytic gradient and central differences.

    Small parameter vectors are checked on every coordinate; larger ones on
    random unit directions plus a random subset of coordinates. Coordinates
    where the one-sided differences disagree (a ReLU kink inside the step)
    are skipped.
    """
    p = np.asarray(p, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.size != p.size:
        raise NumericError(f"Gradient has {analytic.size} entries for {p.size} parameters")
    f0 = float(f(p))
    rng = np.random.default_rng(seed)

    def probe(direction: np.ndarray, expected: float) -> Optional[float]:
        fp = float(f(p + step * direction))
        fm = float(f(p - step * direction))
        forward = (fp - f0) / step
        backward = (f0 - fm) / step
        if abs(forward - backward) > 1e-4 + 1e-3 * max(abs(forward), abs(backward)):
            return None
        return _relative_error(expected, (fp - fm) / (2 * step), floor)

    errors = []
    skipped = 0
    if p.size <= max_coordinates:
        coords = np.arange(p.size)
    else:
        coords = np.sort(rng.choice(p.size, size=min(n_sampled_coordinates, p.size), replace=False))
        for _ in range(n_directions):
            v = rng.normal(size=p.size)
            v /= np.linalg.norm(v)
            err = probe(v, float(analytic @ v))
            if err is None:
                skipped += 1
            else:
                errors.append(err)

    for i in coords:
        e = np.zeros_like(p)
        e[i] = 1.0
        err = probe(e, float(analytic[i]))
        if err is None:
            skipped += 1
        else:
            errors.append(err)

    if skipped:
        logger.debug(f"finite_diff_check skipped {skipped} probes at non-differentiable points")
    return max(errors) if errors else 0.0
