from __future__ import annotations

import numpy as np


class RMSprop:
    """v <- rho*v + (1-rho)*g^2;  theta <- theta - lr*g/(sqrt(v) + eps)."""

    def __init__(self, rho: float = 0.9, eps: float = 1e-8):
        self.rho = rho
        self.eps = eps
        self.state: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in params.items():
            g = grads[name]
            v = self.state.get(name)
            if v is None:
                v = self.state[name] = np.zeros_like(p)
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            p -= (lr * g / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


def rmsprop_step(net, grads: dict[str, np.ndarray], lr: float) -> None:
    """Update ``net`` in place; accumulators persist on ``net.rms``."""
    net.rms.step(net.parameters(), grads, lr)
