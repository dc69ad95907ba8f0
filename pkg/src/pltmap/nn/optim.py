"""ADAM and a reduce-on-plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected ADAM update, applied in place to ``params``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p -= step.astype(p.dtype, copy=False)
    return params, state


@dataclass
class PlateauScheduler:
    """Halve the rate after ``patience`` epochs without a new best."""

    lr: float = 1e-3
    factor: float = 0.5
    patience: int = 10
    floor: float = 1e-5
    best: float = float("inf")
    wait: int = 0

    def step(self, metric):
        if metric < self.best:
            self.best = metric
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.wait = 0
        return self.lr
