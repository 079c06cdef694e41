"""SGD with momentum and the polynomial learning-rate decay."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import GradientError, Tensor


def lr_schedule(step: int, max_steps: int, lr0: float = 1e-4, power: float = 0.9) -> float:
    """lr0 * (1 - step / max_steps) ** power."""
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    if not 0 <= step <= max_steps:
        raise ValueError(f"step {step} outside [0, {max_steps}]")
    return lr0 * (1.0 - step / max_steps) ** power


class SGD:
    """v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v."""

    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: list[np.ndarray | None] = [None] * len(self.params)

    def step(self, lr: float) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise GradientError(f"{len(missing)} parameters have no gradient (first index {missing[0]})")
        for i, p in enumerate(self.params):
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v = self.velocity[i]
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[i] = v
            p.data = (p.data - lr * v).astype(p.dtype)
            p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 5e-4,
             state: SGD | None = None) -> SGD:
    """One update; pass the returned object back in to keep velocity buffers."""
    if state is None:
        state = SGD(params, momentum, weight_decay)
    state.step(lr)
    return state
