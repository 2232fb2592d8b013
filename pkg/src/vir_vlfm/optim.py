"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    def __init__(self, named_params: list[tuple[str, Parameter]], weight_decay: float = 0.05,
                 betas: tuple[float, float] = (0.9, 0.99), eps: float = 1e-8):
        self.params = list(named_params)
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = OptimizerState()
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, lr: float) -> None:
        """One update from the parameters' current ``.grad`` (missing grads count as zero)."""
        grads = {}
        for name, p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}; step aborted")
            grads[name] = g
        st = self.state
        st.step += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for name, p in self.params:
            g = grads[name]
            m = st.m[name]
            v = st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def lr_at(step: int, total: int, lr: float, min_lr: float, warmup: int, cosine: bool = True) -> float:
    """Linear warmup from ``min_lr`` to ``lr``, then cosine decay back to ``min_lr``."""
    if warmup > 0 and step < warmup:
        return min_lr + (lr - min_lr) * (step + 1) / warmup
    if not cosine:
        return lr
    span = max(1, total - warmup)
    progress = min(1.0, (step - warmup) / span)
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + math.cos(math.pi * progress))
