"""Finite-difference gradient suite over every differentiable op and a toy end-to-end model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Parameter, Tensor, gradient_check, ops
from .bridge import BridgeConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .flow import bilinear_warp
from .model import ModelConfig, VIRModel

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _p(rng, *shape, lo=-1.0, hi=1.0) -> Parameter:
    return Parameter(rng.uniform(lo, hi, shape))


def _project(out: Tensor, seed: int) -> Tensor:
    """Scalarize with fixed random weights so every output coordinate matters."""
    w = np.random.default_rng([seed, *out.shape]).normal(size=out.shape)
    return ops.sum(ops.mul(out, Tensor(w)))


def _op_cases(seed: int) -> dict[str, tuple[Callable[[], Tensor], list[Parameter]]]:
    rng = np.random.default_rng(seed)
    r = seed + 1
    a, b = _p(rng, 2, 3, 4), _p(rng, 2, 3, 4)
    row = _p(rng, 4)
    m1, m2, m3 = _p(rng, 2, 3, 4), _p(rng, 2, 4, 5), _p(rng, 4, 5)
    w, bias = _p(rng, 4, 6), _p(rng, 6)
    gain, beta = _p(rng, 4, lo=0.5, hi=1.5), _p(rng, 4)
    img, k3, k1, kb = _p(rng, 2, 3, 5, 5), _p(rng, 4, 3, 3, 3), _p(rng, 4, 3, 1, 1), _p(rng, 4)
    logits = _p(rng, 2, 3, 5)
    onehot = np.eye(5)[rng.integers(5, size=(2, 3))]
    weights = rng.integers(0, 2, size=(2, 3)).astype(float)
    weights[0, 0] = 1.0
    table = _p(rng, 6, 4)
    ids = rng.integers(6, size=(2, 3))
    grid = _p(rng, 2, 3, 4, 4)
    # flows kept away from lattice lines, where bilinear sampling is not differentiable
    frac = rng.uniform(0.2, 0.8, (2, 2, 4, 4)) * rng.choice([-1.0, 1.0], (2, 2, 4, 4))
    flow = Parameter(frac + rng.integers(-1, 2, (2, 2, 4, 4)))
    return {
        "add": (lambda: _project(ops.add(a, b), r), [a, b]),
        "add_broadcast": (lambda: _project(ops.add(a, row), r), [a, row]),
        "sub": (lambda: _project(ops.sub(a, row), r), [a, row]),
        "mul": (lambda: _project(ops.mul(a, b), r), [a, b]),
        "mul_broadcast": (lambda: _project(ops.mul(row, a), r), [a, row]),
        "scale": (lambda: _project(ops.scale(a, -2.5), r), [a]),
        "matmul_batched": (lambda: _project(ops.matmul(m1, m2), r), [m1, m2]),
        "matmul_shared": (lambda: _project(ops.matmul(m1, m3), r), [m1, m3]),
        "linear": (lambda: _project(ops.linear(a, w, bias), r), [a, w, bias]),
        "gelu": (lambda: _project(ops.gelu(a), r), [a]),
        "sigmoid": (lambda: _project(ops.sigmoid(a), r), [a]),
        "softmax": (lambda: _project(ops.softmax(a), r), [a]),
        "layer_norm": (lambda: _project(ops.layer_norm(a, gain, beta), r), [a, gain, beta]),
        "conv2d_3x3": (lambda: _project(ops.conv2d(img, k3, kb), r), [img, k3, kb]),
        "conv2d_1x1": (lambda: _project(ops.conv2d(img, k1), r), [img, k1]),
        "cross_entropy": (lambda: ops.softmax_cross_entropy(logits, onehot, weights), [logits]),
        "reshape_transpose": (lambda: _project(ops.transpose(ops.reshape(a, (6, 4)), (1, 0)), r), [a]),
        "concat": (lambda: _project(ops.concat([a, b], axis=1), r), [a, b]),
        "index": (lambda: _project(ops.index(a, (slice(None), slice(1, 3))), r), [a]),
        "take_rows": (lambda: _project(ops.take_rows(table, ids), r), [table]),
        "expand": (lambda: _project(ops.expand(row, 3), r), [row]),
        "sum_axis": (lambda: _project(ops.sum(a, axis=1), r), [a]),
        "mean": (lambda: ops.mean(ops.mul(a, b)), [a, b]),
        "bilinear_warp": (lambda: _project(bilinear_warp(grid, flow), r), [grid, flow]),
    }


def toy_config(fusion: str = "add", emphasis_input: str = "self-other") -> ModelConfig:
    enc = EncoderConfig(image_size=16, patch=4, width=8, depth=2, heads=2, bottleneck=4, fused_every=2)
    br = BridgeConfig(queries=2, width=8, depth=1, heads=2, emphasis_input=emphasis_input)
    dec = DecoderConfig(width=8, depth=1, heads=2, max_len=6, prefix_len=4)
    return ModelConfig(enc, br, dec, vocab_size=7, fusion=fusion)


def toy_model(seed: int = 0, fusion: str = "add", emphasis_input: str = "self-other") -> VIRModel:
    """Adapt-phase toy model with every zero-initialized weight randomized."""
    model = VIRModel(toy_config(fusion, emphasis_input), seed=seed)
    rng = np.random.default_rng([seed, 77])
    for name, p in model.named_parameters():
        if not np.any(p.data):
            p.data = rng.normal(0, 0.05 if name.startswith("flow.predict") else 0.3, p.shape)
    return model


def end_to_end_case(seed: int = 0, fusion: str = "add", emphasis_input: str = "self-other"):
    model = toy_model(seed, fusion, emphasis_input)
    rng = np.random.default_rng([seed, 78])
    img1, img2 = rng.uniform(size=(2, 3, 16, 16)), rng.uniform(size=(2, 3, 16, 16))
    targets = [[3, 4, 1], [5, 1]]
    params = [p for _, p in model.named_parameters()]
    return (lambda: model.loss(img1, img2, targets)), params


def run_suite(seed: int = 0, coords: int = 32) -> list[CheckResult]:
    results = [CheckResult(n, gradient_check(f, ps, coords=coords, seed=seed))
               for n, (f, ps) in _op_cases(seed).items()]
    for fusion in ("add", "subtract", "concat"):
        f, ps = end_to_end_case(seed, fusion)
        results.append(CheckResult(f"end_to_end_{fusion}", gradient_check(f, ps, coords=coords, seed=seed)))
    for mode in ("diff", "self-other-diff"):
        f, ps = end_to_end_case(seed, "add", mode)
        results.append(CheckResult(f"end_to_end_{mode}", gradient_check(f, ps, coords=coords, seed=seed)))
    return results
