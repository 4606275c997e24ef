"""AdamW with decoupled weight decay and a per-epoch exponential schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autograd import Tensor


@dataclass
class OptimizerState:
    learning_rate: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    eps: float = 1e-9
    lr_decay_per_epoch: float = 0.999 ** (1 / 8)
    step_count: int = 0
    epoch: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.lr_decay_per_epoch <= 0:
            raise ValueError(f"lr_decay_per_epoch must be positive, got {self.lr_decay_per_epoch}")

    def end_epoch(self) -> None:
        """Apply the per-epoch learning-rate decay."""
        self.epoch += 1
        self.learning_rate *= self.lr_decay_per_epoch


def adamw_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """Update ``params`` in place from their ``.grad`` buffers.

    Raises:
        ValueError: if any parameter has no gradient.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adamw_step: parameter {name!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            state.exp_avg_sq[name] = np.zeros_like(p.data)
        v = state.exp_avg_sq[name]
        p.data *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v) / np.sqrt(bc2) + state.eps
        p.data -= (lr / bc1) * m / denom


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
