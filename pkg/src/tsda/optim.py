"""AdaDelta updates over named parameter arrays."""
from __future__ import annotations

from typing import Mapping

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


class AdaDelta:
    """Per-element AdaDelta (no global learning rate).

    Parameters are updated in place, so aliased arrays stay aliased. State is
    keyed by parameter name; each name must always refer to the same shape.
    """

    def __init__(self, rho: float = 0.95, epsilon: float = 1e-6):
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.rho = rho
        self.epsilon = epsilon
        self.sq_grad: dict[str, np.ndarray] = {}
        self.sq_delta: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter block {name!r}")
        rho, eps = self.rho, self.epsilon
        for name, g in grads.items():
            x = params[name]
            if g.shape != x.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {x.shape} for {name!r}")
            eg = self.sq_grad.setdefault(name, np.zeros_like(x))
            ed = self.sq_delta.setdefault(name, np.zeros_like(x))
            eg *= rho
            eg += (1.0 - rho) * g * g
            delta = -np.sqrt((ed + eps) / (eg + eps)) * g
            ed *= rho
            ed += (1.0 - rho) * delta * delta
            x += delta
