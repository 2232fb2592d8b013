"""Central finite-difference gradient checker."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import ShapeError, Tensor, no_grad

# Below this magnitude the central difference is dominated by float64 rounding
# (~1e-16 * |f| / step, i.e. ~1e-10 for O(1) losses), so errors are measured absolutely.
GRAD_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float, floor: float = GRAD_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5,
                   coords: int = 32, seed: int = 0, floor: float = GRAD_FLOOR) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current parameter values and returns a
    scalar Tensor. Up to ``coords`` coordinates per parameter are sampled.
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if out.size != 1:
        raise ShapeError(f"gradient_check: f must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            picks = np.arange(n) if n <= coords else rng.choice(n, size=coords, replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + step
                fp = f().item()
                flat[i] = orig - step
                fm = f().item()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                worst = max(worst, relative_error(float(ga.reshape(-1)[i]), numeric, floor))
    return worst
