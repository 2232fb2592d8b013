"""Parameter containers with dotted names, torch-style."""
from __future__ import annotations

import fnmatch
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Registers Parameters and sub-Modules in assignment order."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching entries in; returns the names that were not found in ``state``."""
        missing = []
        for name, p in self.named_parameters():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data[...] = arr
        if strict and missing:
            raise KeyError(f"checkpoint lacks {len(missing)} parameters, e.g. {missing[0]}")
        return missing

    def freeze(self, patterns: list[str] | None = None) -> None:
        """Stop gradients for all parameters, or those matching glob ``patterns``."""
        for name, p in self.named_parameters():
            if patterns is None or any(fnmatch.fnmatchcase(name, pat) for pat in patterns):
                p.requires_grad = False

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        super().__init__()
        bound = 1.0 / np.sqrt(d_in)
        w = np.zeros((d_in, d_out)) if zero else rng.uniform(-bound, bound, (d_in, d_out))
        self.weight = Parameter(w)
        if bias:
            self.bias = Parameter(np.zeros(d_out))
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, zero: bool = False):
        super().__init__()
        bound = 1.0 / np.sqrt(c_in * k * k)
        shape = (c_out, c_in, k, k)
        self.weight = Parameter(np.zeros(shape) if zero else rng.uniform(-bound, bound, shape))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)


class Attention(Module):
    """Multi-head scaled dot-product attention; queries and keys may differ."""

    def __init__(self, d_q: int, d_kv: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if d_q % heads:
            raise ValueError(f"width {d_q} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d_q, d_q, rng)
        self.k = Linear(d_kv, d_q, rng)
        self.v = Linear(d_kv, d_q, rng)
        self.out = Linear(d_q, d_q, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return x.reshape(b, t, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, context: Tensor | None = None, mask: np.ndarray | None = None) -> Tensor:
        context = x if context is None else context
        b, t, d = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(context))
        v = self._split(self.v(context))
        scores = ops.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / np.sqrt(d // self.heads))
        if mask is not None:
            scores = ops.add(scores, mask)
        attn = ops.softmax(scores, axis=-1)
        y = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(y)
