"""Gradient-descent updates over named parameter dictionaries."""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from hypertab.errors import ConfigError

ADAM = "adam"
SGD = "sgd"


@dataclass
class Optimizer:
    """
    Plain (sgd) or adaptive-moment (adam) updates.

    State (moment estimates and step count) is kept per parameter name so it
    can be checkpointed with the parameters.
    """
    kind: str = ADAM
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (ADAM, SGD):
            raise ConfigError(f"Unknown optimizer: {self.kind}")
        if self.lr < 0:
            raise ConfigError(f"Learning rate must be >= 0, got {self.lr}")

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Return updated parameters; the inputs are not modified."""
        self.step_count += 1
        if self.kind == SGD:
            return {k: params[k] - self.lr * grads[k] for k in params}

        b1, b2 = self.betas
        updated = {}
        for k in sorted(params):
            g = grads[k]
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1 ** self.step_count)
            v_hat = v / (1 - b2 ** self.step_count)
            updated[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated

    def state_tensors(self, prefix: str = "opt") -> Dict[str, np.ndarray]:
        tensors = {}
        for k in sorted(self.m):
            tensors[f"{prefix}.m.{k}"] = self.m[k]
            tensors[f"{prefix}.v.{k}"] = self.v[k]
        return tensors

    def load_state_tensors(self, tensors: Dict[str, np.ndarray], prefix: str = "opt") -> None:
        m_prefix, v_prefix = f"{prefix}.m.", f"{prefix}.v."
        self.m = {k[len(m_prefix):]: t for k, t in tensors.items() if k.startswith(m_prefix)}
        self.v = {k[len(v_prefix):]: t for k, t in tensors.items() if k.startswith(v_prefix)}
