"""AdamW with decoupled weight decay and a step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import ShapeMismatch


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2


@dataclass
class AdamWState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamWState,
               lr: float, config: AdamWConfig = AdamWConfig()) -> tuple[list[np.ndarray], AdamWState]:
    """One AdamW update. Returns new parameter arrays and the advanced state.

    The decay term ``lr * weight_decay * p`` is applied to the parameters
    directly, separate from the adaptive gradient step.
    """
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatch(f"param/grad shape mismatch {np.shape(p)} vs {np.shape(g)}")
    m = state.m or [np.zeros_like(p, dtype=np.float64) for p in params]
    v = state.v or [np.zeros_like(p, dtype=np.float64) for p in params]
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        p = np.asarray(p, dtype=np.float64)
        mi = b1 * mi + (1.0 - b1) * g
        vi = b2 * vi + (1.0 - b2) * g * g
        p = p - lr * config.weight_decay * p
        p = p - lr * (mi / bc1) / (np.sqrt(vi / bc2) + config.eps)
        new_p.append(p)
        new_m.append(mi)
        new_v.append(vi)
    return new_p, AdamWState(t, new_m, new_v)


class AdamW:
    """Stateful wrapper that updates a model's parameter tensors in place."""

    def __init__(self, params, lr: float = 1e-3, config: AdamWConfig = AdamWConfig()):
        self.params = list(params)
        self.lr = lr
        self.config = config
        self.state = AdamWState()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adamw_step([p.data for p in self.params], grads, self.state, self.lr, self.config)
        for p, a in zip(self.params, new):
            p.data = a


def step_lr(base_lr: float, epoch: int, decay: float = 0.1, period: int = 10) -> float:
    return base_lr * decay ** (epoch // period)
