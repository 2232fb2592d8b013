"""Query transformer, semantic emphasis gates, and projection to decoder width."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import LayerNorm, Linear, Module, Parameter, Tensor, ops
from .autodiff.nn import Attention

EMPHASIS_INPUTS = ("self-other", "diff", "self-other-diff")


@dataclass
class BridgeConfig:
    queries: int = 8
    width: int = 64
    depth: int = 2
    heads: int = 4
    emphasis: bool = True
    emphasis_input: str = "self-other"


class QueryBlock(Module):
    def __init__(self, d_q: int, d_kv: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.ln_q = LayerNorm(d_q)
        self.ln_kv = LayerNorm(d_kv)
        self.cross = Attention(d_q, d_kv, heads, rng)
        self.ln_ff = LayerNorm(d_q)
        self.fc1 = Linear(d_q, 4 * d_q, rng)
        self.fc2 = Linear(4 * d_q, d_q, rng)

    def __call__(self, q: Tensor, visual: Tensor) -> Tensor:
        q = q + self.cross(self.ln_q(q), context=self.ln_kv(visual))
        return q + self.fc2(ops.gelu(self.fc1(self.ln_ff(q))))


class QueryTransformer(Module):
    """``K`` learned queries cross-attending to all visual tokens."""

    def __init__(self, cfg: BridgeConfig, d_visual: int, rng: np.random.Generator):
        super().__init__()
        self.queries = Parameter(rng.normal(0, 0.02, (cfg.queries, cfg.width)))
        self.depth = cfg.depth
        for i in range(cfg.depth):
            setattr(self, f"block{i}", QueryBlock(cfg.width, d_visual, cfg.heads, rng))
        self.ln_out = LayerNorm(cfg.width)

    def __call__(self, visual: Tensor) -> Tensor:
        q = ops.expand(self.queries, visual.shape[0])
        for i in range(self.depth):
            q = getattr(self, f"block{i}")(q, visual)
        return self.ln_out(q)


class Emphasis(Module):
    """Sigmoid gates from self-then-other features; one FC serves both orderings."""

    def __init__(self, d_q: int, mode: str = "self-other"):
        super().__init__()
        if mode not in EMPHASIS_INPUTS:
            raise ValueError(f"emphasis input must be one of {EMPHASIS_INPUTS}, got {mode!r}")
        self.mode = mode
        d_in = {"self-other": 2 * d_q, "diff": d_q, "self-other-diff": 3 * d_q}[mode]
        self.weight = Parameter(np.zeros((d_in, d_q)))
        self.bias = Parameter(np.zeros(d_q))

    def _features(self, own: Tensor, other: Tensor) -> Tensor:
        if self.mode == "self-other":
            return ops.concat([own, other], axis=-1)
        if self.mode == "diff":
            return own - other
        return ops.concat([own, other, own - other], axis=-1)

    def gates(self, q1: Tensor, q2: Tensor) -> tuple[Tensor, Tensor]:
        if q1.shape != q2.shape:
            raise ValueError(f"query shapes differ: {q1.shape} vs {q2.shape}")
        a1 = ops.sigmoid(ops.linear(self._features(q1, q2), self.weight, self.bias))
        a2 = ops.sigmoid(ops.linear(self._features(q2, q1), self.weight, self.bias))
        return a1, a2

    def __call__(self, q1: Tensor, q2: Tensor) -> tuple[Tensor, Tensor]:
        a1, a2 = self.gates(q1, q2)
        return a1 * q1, a2 * q2


class Bridge(Module):
    def __init__(self, cfg: BridgeConfig, d_visual: int, d_dec: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.qformer = QueryTransformer(cfg, d_visual, rng)
        if cfg.emphasis:
            self.emph = Emphasis(cfg.width, cfg.emphasis_input)
        else:
            self.emph = None
        self.proj = Linear(cfg.width, d_dec, rng)

    def project(self, f1: Tensor, f2: Tensor) -> Tensor:
        """Image-1 slots then image-2 slots, mapped to decoder width: ``[B, 2K, d_dec]``."""
        return self.proj(ops.concat([f1, f2], axis=1))

    def __call__(self, x1: Tensor, x2: Tensor) -> Tensor:
        b = x1.shape[0]
        q = self.qformer(ops.concat([x1, x2], axis=0))
        q1, q2 = q[:b], q[b:]
        if self.emph is not None:
            q1, q2 = self.emph(q1, q2)
        return self.project(q1, q2)
