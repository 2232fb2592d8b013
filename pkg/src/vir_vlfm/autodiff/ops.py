"""Differentiable primitives.

Every op takes and returns :class:`Tensor`. Arrays passed where a Tensor is
expected are wrapped as constants.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from .tensor import DTYPE, ShapeError, Tensor, as_tensor

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
LN_EPS = 1e-5


def _trailing_compatible(a: tuple, b: tuple) -> bool:
    if len(a) < len(b):
        a, b = b, a
    return len(b) == 0 or a[len(a) - len(b):] == b


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum leading axes of ``g`` so it matches ``shape`` (inverse of trailing broadcast)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if not _trailing_compatible(a.shape, b.shape):
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if not _trailing_compatible(a.shape, b.shape):
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data - b.data, (a, b),
                          lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)), "sub")


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, float(b))
    if isinstance(a, (int, float)):
        return scale(b, float(a))
    a, b = as_tensor(a), as_tensor(b)
    if not _trailing_compatible(a.shape, b.shape):
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def backward(g):
        return (_reduce_to(g * bd, sa) if a.requires_grad else None,
                _reduce_to(g * ad, sb) if b.requires_grad else None)

    return Tensor.from_op(ad * bd, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, p]`` or batched ``a[..., m, k] @ b[..., k, p]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} vs {b.shape}")
    if b.ndim > a.ndim:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor.from_op(ad @ bd, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight (+ bias)``; weight is ``[in, out]``."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# -- nonlinearities ------------------------------------------------------------

def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (cdf + xd * pdf),)

    return Tensor.from_op(xd * cdf, (x,), backward, "gelu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(s, (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis (population variance), then ``* gain + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: last dim {d} vs gain {gain.shape} / bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return Tensor.from_op(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


# -- convolution -----------------------------------------------------------------

def _im2col3(x: np.ndarray) -> np.ndarray:
    """``[..., C, H, W]`` -> ``[..., C*9, H*W]`` with zero padding 1."""
    *lead, c, h, w = x.shape
    pad = np.zeros((*lead, c, h + 2, w + 2), dtype=DTYPE)
    pad[..., 1:-1, 1:-1] = x
    cols = np.empty((*lead, c, 9, h, w), dtype=DTYPE)
    for i in range(3):
        for j in range(3):
            cols[..., i * 3 + j, :, :] = pad[..., i:i + h, j:j + w]
    return cols.reshape(*lead, c * 9, h * w)


def _col2im3(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    lead = cols.shape[:-2]
    cols = cols.reshape(*lead, c, 9, h, w)
    pad = np.zeros((*lead, c, h + 2, w + 2), dtype=DTYPE)
    for i in range(3):
        for j in range(3):
            pad[..., i:i + h, j:j + w] += cols[..., i * 3 + j, :, :]
    return pad[..., 1:-1, 1:-1]


def conv2d(x, kernel, bias=None) -> Tensor:
    """Cross-correlation of ``x[..., C_in, H, W]`` with ``kernel[C_out, C_in, k, k]``.

    ``k`` is 1 or 3; ``k=3`` zero-pads by one so ``H, W`` are preserved.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d: kernel must be [C_out, C_in, k, k], got {kernel.shape}")
    k = kernel.shape[2]
    if k not in (1, 3):
        raise ShapeError(f"conv2d: unsupported kernel size {k} (expected 1 or 3)")
    if x.ndim < 3 or x.shape[-3] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {kernel.shape}")
    *lead, c, h, w = x.shape
    c_out = kernel.shape[0]
    wmat = kernel.data.reshape(c_out, -1)
    cols = x.data.reshape(*lead, c, h * w) if k == 1 else _im2col3(x.data)
    out = (wmat @ cols).reshape(*lead, c_out, h, w)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(*lead, c_out, h * w)
        gx = gk = None
        if kernel.requires_grad:
            gk = (g2 @ np.swapaxes(cols, -1, -2)).reshape(-1, c_out, wmat.shape[1]).sum(axis=0)
            gk = gk.reshape(kernel.shape)
        if x.requires_grad:
            gcols = wmat.T @ g2
            gx = gcols.reshape(x.shape) if k == 1 else _col2im3(gcols, c, h, w)
        if bias is None:
            return gx, gk
        return gx, gk, g2.reshape(-1, c_out, h * w).sum(axis=(0, 2))

    return Tensor.from_op(out, parents, backward, "conv2d")


# -- loss --------------------------------------------------------------------------

def softmax_cross_entropy(logits, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of one-hot ``targets`` under ``softmax(logits)``.

    ``weights`` (shape ``logits.shape[:-1]``) excludes padded rows when zero; the
    mean is taken over the total weight.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError(f"cross entropy: targets {t.shape} vs logits {logits.shape}")
    flat = t.reshape(-1, t.shape[-1])
    if not (np.all((flat == 0.0) | (flat == 1.0)) and np.all(flat.sum(axis=1) == 1.0)):
        raise ValueError("cross entropy: every target row must be one-hot")
    w = np.ones(t.shape[:-1], dtype=DTYPE) if weights is None else np.asarray(weights, dtype=DTYPE)
    if w.shape != t.shape[:-1]:
        raise ShapeError(f"cross entropy: weights {w.shape} vs rows {t.shape[:-1]}")
    total = w.sum()
    if total <= 0:
        raise ValueError("cross entropy: weights sum to zero")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    nll = -(logp * t).sum(axis=-1)
    loss = (nll * w).sum() / total

    def backward(g):
        p = np.exp(logp)
        return (g * (p - t) * (w / total)[..., None],)

    return Tensor.from_op(np.array(loss), (logits,), backward, "cross_entropy")


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    """Plain-array log-softmax over the last axis (inference helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# -- shape manipulation ------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                          lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            out.append(g[tuple(sl)] if t.requires_grad else None)
        return out

    return Tensor.from_op(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def index(x, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    src = x.shape

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        full[idx] = g
        return (full,)

    return Tensor.from_op(np.ascontiguousarray(x.data[idx]), (x,), backward, "index")


def take_rows(table, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return Tensor.from_op(table.data[ids], (table,), backward, "take_rows")


def expand(x, n: int) -> Tensor:
    """Repeat ``x`` along a new leading axis of size ``n``."""
    x = as_tensor(x)
    return Tensor.from_op(np.broadcast_to(x.data, (n,) + x.shape).copy(), (x,),
                          lambda g: (g.sum(axis=0),), "expand")


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    src = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return Tensor.from_op(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis), 1.0 / n)
