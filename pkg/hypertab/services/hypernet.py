"""
Hypernetwork, generated main network and retrieval-augmented logits.

The hypernetwork reads an embedded, labeled generation set and emits the
weights of a 3-layer main network one layer at a time. Each layer is
conditioned on the activations of the partially generated network.
Everything is expressed as Tape operations so the same code path serves
meta-training (parameters marked) and inference (parameters as constants).
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import softmax

from hypertab.errors import ConfigError, DataError, NumericError
from hypertab.services.autodiff import Node, Tape

logger = logging.getLogger(__name__)

N_LAYERS = 3
DEFAULT_K_MAX = 16
DEFAULT_HIDDEN = 1024
DEFAULT_BLOCK_DEPTH = 2


@dataclass(frozen=True)
class HyperNetConfig:
    d_main: int = 512
    hidden: int = DEFAULT_HIDDEN
    k_max: int = DEFAULT_K_MAX
    block_depth: int = DEFAULT_BLOCK_DEPTH

    def __post_init__(self):
        if min(self.d_main, self.hidden, self.k_max, self.block_depth) < 1:
            raise ConfigError(f"Invalid hypernetwork dimensions: {self}")

    @property
    def cond_dim(self) -> int:
        """Width of [a_prev | x | label block | global mean | class mean]."""
        return 4 * self.d_main + self.k_max

    def head_width(self, layer: int) -> int:
        d = self.d_main
        return d * (d + 1) if layer < N_LAYERS else d + 1


def param_shapes(config: HyperNetConfig) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes of every hypernetwork parameter, in generation order."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    for layer in range(1, N_LAYERS + 1):
        fan_in = config.cond_dim
        for j in range(config.block_depth):
            shapes[f"block{layer}.w{j}"] = (config.hidden, fan_in)
            shapes[f"block{layer}.b{j}"] = (config.hidden,)
            fan_in = config.hidden
        shapes[f"head{layer}.w"] = (config.head_width(layer), config.hidden)
        shapes[f"head{layer}.b"] = (config.head_width(layer),)
    return shapes


@dataclass
class HyperNetwork:
    """Hypernetwork parameters phi, keyed by name."""
    config: HyperNetConfig
    params: Dict[str, np.ndarray]

    @classmethod
    def init(cls, config: HyperNetConfig, seed: int = 0) -> "HyperNetwork":
        """He-normal block weights, N(0, 1/h) head weights, zero biases."""
        rng = np.random.default_rng(seed)
        params: Dict[str, np.ndarray] = {}
        for name, shape in param_shapes(config).items():
            if len(shape) == 1:
                params[name] = np.zeros(shape)
            elif name.startswith("head"):
                params[name] = rng.normal(0.0, np.sqrt(1.0 / config.hidden), size=shape)
            else:
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), size=shape)
        net = cls(config=config, params=params)
        logger.debug(f"Initialized hypernetwork with {net.n_params} parameters")
        return net

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def check_shapes(self) -> "HyperNetwork":
        expected = param_shapes(self.config)
        actual = {k: v.shape for k, v in self.params.items()}
        if actual != expected:
            raise DataError("Stored hypernetwork parameters do not match its dimensions")
        return self


@dataclass(frozen=True)
class MainNetParams:
    """Generated weights theta of the 3-layer main network."""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    @property
    def n_outputs(self) -> int:
        return self.W3.shape[0]

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    @classmethod
    def from_dict(cls, values: Dict[str, np.ndarray]) -> "MainNetParams":
        return cls(**{name: np.asarray(values[name], dtype=np.float64) for name in cls.NAMES})

    def flat(self) -> np.ndarray:
        """All weights as one vector (W1, b1, W2, b2, W3, b3 order)."""
        return np.concatenate([np.ravel(getattr(self, n)) for n in self.NAMES])

    def check_finite(self) -> "MainNetParams":
        for name in self.NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"Generated weight {name} has non-finite entries")
        return self


def random_main_params(d_main: int, n_outputs: int, seed: int = 0) -> MainNetParams:
    """He-normal weights and zero biases, the from-scratch baseline."""
    rng = np.random.default_rng(seed)
    scale = np.sqrt(2.0 / d_main)
    return MainNetParams(
        W1=rng.normal(0.0, scale, size=(d_main, d_main)),
        b1=np.zeros(d_main),
        W2=rng.normal(0.0, scale, size=(d_main, d_main)),
        b2=np.zeros(d_main),
        W3=rng.normal(0.0, scale, size=(n_outputs, d_main)),
        b3=np.zeros(n_outputs),
    )


# --- Tape builders ---

def phi_nodes(tape: Tape, net: HyperNetwork, trainable: bool) -> Dict[str, Node]:
    """Put phi on a tape, as parameters or constants."""
    if trainable:
        return {k: tape.param(v, k) for k, v in sorted(net.params.items())}
    return {k: tape.constant(v, k) for k, v in sorted(net.params.items())}


def theta_nodes(tape: Tape, theta: MainNetParams, trainable: bool) -> Dict[str, Node]:
    values = theta.as_dict()
    if trainable:
        return {k: tape.param(values[k], k) for k in MainNetParams.NAMES}
    return {k: tape.constant(values[k], k) for k in MainNetParams.NAMES}


def _block(tape: Tape, phi: Dict[str, Node], config: HyperNetConfig, layer: int, u: Node) -> Node:
    v = u
    for j in range(config.block_depth):
        v = tape.relu(tape.affine(v, phi[f"block{layer}.w{j}"], phi[f"block{layer}.b{j}"]))
    return v


def _label_block(config: HyperNetConfig, labels: Optional[np.ndarray], y_std: Optional[np.ndarray], n: int) -> np.ndarray:
    block = np.zeros((n, config.k_max))
    if y_std is not None:
        block[:, 0] = y_std
    else:
        block[np.arange(n), labels] = 1.0
    return block


def generate_on_tape(
    tape: Tape,
    phi: Dict[str, Node],
    config: HyperNetConfig,
    x_gen: Node,
    labels: Optional[np.ndarray] = None,
    n_classes: int = 0,
    y_std: Optional[np.ndarray] = None,
) -> Dict[str, Node]:
    """
    Generate theta layer by layer.

    Classification passes 0-based labels and n_classes; regression passes
    standardized targets y_std instead, which replace the label one-hot and
    make every per-class pooling dataset-level.
    """
    n, d = x_gen.value.shape
    if d != config.d_main:
        raise DataError(f"Generation set has width {d}, hypernetwork expects {config.d_main}")
    regression = y_std is not None
    if not regression:
        if n_classes < 1 or n_classes > config.k_max:
            raise ConfigError(f"Task has {n_classes} classes; hypernetwork supports 1..{config.k_max}")
        labels = np.asarray(labels, dtype=np.int64)

    label_block = tape.constant(_label_block(config, labels, y_std, n), "labels")
    broadcast = np.zeros(n, dtype=np.int64)
    inv_sqrt_d = 1.0 / np.sqrt(d)

    theta: Dict[str, Node] = {}
    a_prev = x_gen
    for layer in range(1, N_LAYERS + 1):
        global_mean = tape.gather_rows(tape.mean_rows(a_prev), broadcast)
        if regression:
            class_mean = global_mean
        else:
            class_mean = tape.gather_rows(tape.group_mean(a_prev, labels, n_classes), labels)
        u = tape.concat([a_prev, x_gen, label_block, global_mean, class_mean], axis=1)
        v = _block(tape, phi, config, layer, u)

        if layer < N_LAYERS:
            head = tape.affine(tape.mean_rows(v), phi[f"head{layer}.w"], phi[f"head{layer}.b"])
            head = tape.reshape(head, (d, d + 1))
            W = tape.scale(tape.slice_cols(head, 0, d), inv_sqrt_d)
            b = tape.reshape(tape.slice_cols(head, d, d + 1), (d,))
            theta[f"W{layer}"], theta[f"b{layer}"] = W, b
            a_next = tape.relu(tape.affine(a_prev, W, b))
            if layer == N_LAYERS - 1:
                a_next = tape.add(a_next, x_gen)
            a_prev = a_next
        else:
            w = tape.affine(v, phi[f"head{layer}.w"], phi[f"head{layer}.b"])
            pooled = tape.mean_rows(w) if regression else tape.group_mean(w, labels, n_classes)
            k = pooled.value.shape[0]
            theta["W3"] = tape.scale(tape.slice_cols(pooled, 0, d), inv_sqrt_d)
            theta["b3"] = tape.reshape(tape.slice_cols(pooled, d, d + 1), (k,))
    return theta


def forward_on_tape(
    tape: Tape,
    theta: Dict[str, Node],
    x: Node,
    dropout_masks: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[Node, Node]:
    """(H, logits) of the main network; dropout masks scale the two hidden activations."""
    a1 = tape.relu(tape.affine(x, theta["W1"], theta["b1"]))
    if dropout_masks is not None:
        a1 = tape.mul_const(a1, dropout_masks[0])
    a2 = tape.relu(tape.affine(a1, theta["W2"], theta["b2"]))
    if dropout_masks is not None:
        a2 = tape.mul_const(a2, dropout_masks[1])
    H = tape.add(a2, x)
    logits = tape.affine(H, theta["W3"], theta["b3"])
    return H, logits


def retrieval_on_tape(tape: Tape, H_q: Node, H_c: Node, Y_c: np.ndarray, tau: float) -> Node:
    """Cosine similarities to the context, aggregated over context labels and scaled by 1/tau."""
    S = tape.matmul(tape.row_l2_normalize(H_q), tape.row_l2_normalize(H_c), transpose_b=True)
    return tape.scale(tape.matmul(S, tape.constant(Y_c, "context_labels")), 1.0 / tau)


# --- Array-level operations ---

def _check_retrieval(tau: float, alpha: Optional[float] = None) -> None:
    if tau <= 0:
        raise ConfigError(f"Retrieval temperature must be > 0, got {tau}")
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"Retrieval weight alpha must lie in [0, 1], got {alpha}")


def _theta_from_nodes(nodes: Dict[str, Node]) -> MainNetParams:
    return MainNetParams.from_dict({k: nodes[k].value for k in MainNetParams.NAMES}).check_finite()


def generate_weights(net: HyperNetwork, X_gen: np.ndarray, Y_gen: np.ndarray) -> MainNetParams:
    """theta from a generation set with one-hot labels (N_gen x K)."""
    X_gen = np.asarray(X_gen, dtype=np.float64)
    Y_gen = np.asarray(Y_gen)
    if X_gen.shape[0] < 1 or Y_gen.shape[0] != X_gen.shape[0]:
        raise DataError(f"Generation set shapes do not match: X {X_gen.shape}, Y {Y_gen.shape}")
    n_classes = Y_gen.shape[1]
    if n_classes == 0:
        raise ConfigError("generate_weights needs classification labels; use the regression adaptation")
    tape = Tape()
    phi = phi_nodes(tape, net, trainable=False)
    labels = np.argmax(Y_gen, axis=1)
    nodes = generate_on_tape(tape, phi, net.config, tape.constant(X_gen), labels=labels, n_classes=n_classes)
    return _theta_from_nodes(nodes)


def generate_weights_regression(net: HyperNetwork, X_gen: np.ndarray, y_std: np.ndarray) -> MainNetParams:
    """theta with a single output row, conditioned on standardized targets."""
    X_gen = np.asarray(X_gen, dtype=np.float64)
    y_std = np.asarray(y_std, dtype=np.float64).reshape(-1)
    if X_gen.shape[0] < 1 or y_std.shape[0] != X_gen.shape[0]:
        raise DataError(f"Generation set shapes do not match: X {X_gen.shape}, y {y_std.shape}")
    tape = Tape()
    phi = phi_nodes(tape, net, trainable=False)
    nodes = generate_on_tape(tape, phi, net.config, tape.constant(X_gen), y_std=y_std)
    return _theta_from_nodes(nodes)


def forward_main(
    theta: MainNetParams,
    X: np.ndarray,
    dropout_masks: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Penultimate representation H and logits."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != theta.W1.shape[1]:
        raise DataError(f"forward_main: expected width {theta.W1.shape[1]}, got {X.shape}")
    tape = Tape()
    H, logits = forward_on_tape(tape, theta_nodes(tape, theta, trainable=False), tape.constant(X), dropout_masks)
    return H.value, logits.value


def retrieval_logits(H_q: np.ndarray, H_c: np.ndarray, Y_c: np.ndarray, tau: float) -> np.ndarray:
    """row_norm(H_q) row_norm(H_c)^T Y_c / tau."""
    _check_retrieval(tau)
    if H_c.shape[0] < 1:
        raise DataError("Retrieval context is empty")
    tape = Tape()
    return retrieval_on_tape(tape, tape.constant(H_q), tape.constant(H_c), Y_c, tau).value


def retrieval_regression(H_q: np.ndarray, H_c: np.ndarray, y_c: np.ndarray) -> np.ndarray:
    """
    Similarity-weighted mean of standardized context targets.

    Negative similarities get zero weight; the weights of each query row are
    renormalized to sum to one.
    """
    tape = Tape()
    S = tape.matmul(tape.row_l2_normalize(tape.constant(H_q)), tape.row_l2_normalize(tape.constant(H_c)), transpose_b=True)
    w = np.maximum(S.value, 0.0)
    return (w @ np.asarray(y_c, dtype=np.float64).reshape(-1, 1)) / (w.sum(axis=1, keepdims=True) + 1e-12)


def combined_logits(net_logits: np.ndarray, ret_logits: np.ndarray, alpha: float) -> np.ndarray:
    """(1 - alpha) * net + alpha * retrieval; exact at both endpoints."""
    _check_retrieval(1.0, alpha)
    tape = Tape()
    return tape.mix(tape.constant(net_logits), tape.constant(ret_logits), alpha).value


def predict_proba(logits: np.ndarray) -> np.ndarray:
    return softmax(logits, axis=1)


# --- Serialization ---

def hypernet_to_state(net: HyperNetwork, prefix: str = "phi") -> Tuple[Dict, Dict[str, np.ndarray]]:
    c = net.config
    meta = {"d_main": c.d_main, "hidden": c.hidden, "k_max": c.k_max, "block_depth": c.block_depth}
    return meta, {f"{prefix}.{k}": v for k, v in sorted(net.params.items())}


def hypernet_from_state(meta: Dict, tensors: Dict[str, np.ndarray], prefix: str = "phi") -> HyperNetwork:
    config = HyperNetConfig(
        d_main=meta["d_main"], hidden=meta["hidden"], k_max=meta["k_max"], block_depth=meta["block_depth"],
    )
    start = f"{prefix}."
    params = {k[len(start):]: v for k, v in tensors.items() if k.startswith(start)}
    return HyperNetwork(config=config, params=params).check_shapes()
