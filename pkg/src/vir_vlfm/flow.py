"""Viewpoint registration flow.

Token sequences become ``[d, g, g]`` feature grids, a small conv head predicts
one displacement field per image, each grid is resampled bilinearly along its
field, and the registered grids are fused with the other image's grid.

Flow units are grid cells. Channel 0 is horizontal (+ samples from the right),
channel 1 vertical (+ samples from below). Sample points outside the grid are
clamped to the border.
"""
from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np

from .autodiff import Conv2d, Module, Parameter, Tensor, ops
from .autodiff.tensor import DTYPE, ShapeError
from .data.ppm import write_ppm

FUSIONS = ("add", "subtract", "concat")


def sequence_to_grid(x: Tensor) -> tuple[Tensor, Tensor]:
    """``[B, n+1, d]`` -> (grid ``[B, d, g, g]``, class token ``[B, 1, d]``)."""
    b, t, d = x.shape
    g = int(round(np.sqrt(t - 1)))
    if g * g != t - 1:
        raise ShapeError(f"{t - 1} patch tokens do not form a square grid")
    grid = x[:, 1:, :].reshape(b, g, g, d).transpose(0, 3, 1, 2)
    return grid, x[:, :1, :]


def grid_to_sequence(grid: Tensor, cls: Tensor) -> Tensor:
    b, d, h, w = grid.shape
    tokens = grid.transpose(0, 2, 3, 1).reshape(b, h * w, d)
    return ops.concat([cls, tokens], axis=1)


def bilinear_warp(grid, flow) -> Tensor:
    """Resample ``grid[..., C, H, W]`` at ``(row + flow_v, col + flow_h)``."""
    grid, flow = ops.as_tensor(grid), ops.as_tensor(flow)
    *lead, c, h, w = grid.shape
    if flow.shape != (*lead, 2, h, w):
        raise ShapeError(f"flow {flow.shape} does not match grid {grid.shape}")
    fd = flow.data
    rows = np.arange(h, dtype=DTYPE)[:, None]
    cols = np.arange(w, dtype=DTYPE)[None, :]
    y_raw = rows + fd[..., 1, :, :]
    x_raw = cols + fd[..., 0, :, :]
    y = np.clip(y_raw, 0.0, h - 1)
    x = np.clip(x_raw, 0.0, w - 1)
    y0 = np.floor(y)
    x0 = np.floor(x)
    wy = y - y0
    wx = x - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    lead_n = int(np.prod(lead)) if lead else 1
    src = grid.data.reshape(lead_n, c, h * w)
    corners = [(y0, x0, (1 - wy) * (1 - wx)), (y0, x1, (1 - wy) * wx),
               (y1, x0, wy * (1 - wx)), (y1, x1, wy * wx)]
    flat_idx = [(yy * w + xx).reshape(lead_n, 1, h * w) for yy, xx, _ in corners]
    values = [np.take_along_axis(src, np.broadcast_to(ix, (lead_n, c, h * w)), axis=2)
              for ix in flat_idx]
    weights = [wt.reshape(lead_n, 1, h * w) for _, _, wt in corners]
    out = values[0] * weights[0]
    for v, wt in zip(values[1:], weights[1:]):
        out = out + v * wt

    inside_y = ((y_raw >= 0.0) & (y_raw <= h - 1)).reshape(lead_n, 1, h * w)
    inside_x = ((x_raw >= 0.0) & (x_raw <= w - 1)).reshape(lead_n, 1, h * w)
    wy_f = wy.reshape(lead_n, 1, h * w)
    wx_f = wx.reshape(lead_n, 1, h * w)

    def backward(g):
        g = g.reshape(lead_n, c, h * w)
        ggrid = gflow = None
        if grid.requires_grad:
            base = (np.arange(lead_n)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
            acc = np.zeros(lead_n * c * h * w, dtype=DTYPE)
            for ix, wt in zip(flat_idx, weights):
                acc += np.bincount((base + ix).reshape(-1), weights=(g * wt).reshape(-1),
                                   minlength=acc.size)
            ggrid = acc.reshape(grid.shape)
        if flow.requires_grad:
            v00, v01, v10, v11 = values
            d_wy = ((1 - wx_f) * (v10 - v00) + wx_f * (v11 - v01))
            d_wx = ((1 - wy_f) * (v01 - v00) + wy_f * (v11 - v10))
            gy = (g * d_wy).sum(axis=1, keepdims=True) * inside_y
            gx = (g * d_wx).sum(axis=1, keepdims=True) * inside_x
            gflow = np.concatenate([gx, gy], axis=1).reshape(flow.shape)
        return ggrid, gflow

    return Tensor.from_op(out.reshape(grid.shape), (grid, flow), backward, "bilinear_warp")


class ViewpointFlow(Module):
    """Predicts two flow fields from a pair of grids and fuses the registered grids."""

    def __init__(self, width: int, rng: np.random.Generator, fusion: str = "add"):
        super().__init__()
        if fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
        reduced = max(1, width // 4)
        self.fusion = fusion
        self.reduce_a = Conv2d(width, reduced, 1, rng)
        self.reduce_b = Conv2d(width, reduced, 1, rng)
        self.predict = Conv2d(2 * reduced, 4, 3, rng, zero=True)
        if fusion == "concat":
            # [I | I] so concatenation starts out identical to addition
            self.concat_proj = Parameter(np.concatenate([np.eye(width), np.eye(width)], axis=0))

    def predict_flow(self, g1: Tensor, g2: Tensor) -> tuple[Tensor, Tensor]:
        if g1.shape != g2.shape:
            raise ShapeError(f"grid shapes differ: {g1.shape} vs {g2.shape}")
        both = self.predict(ops.concat([self.reduce_a(g1), self.reduce_b(g2)], axis=-3))
        return both[:, 0:2], both[:, 2:4]

    def _fuse(self, own: Tensor, other_warped: Tensor) -> Tensor:
        if self.fusion == "add":
            return own + other_warped
        if self.fusion == "subtract":
            return own - other_warped
        joint = ops.concat([own, other_warped], axis=1).transpose(0, 2, 3, 1)
        return (joint @ self.concat_proj).transpose(0, 3, 1, 2)

    def __call__(self, x1: Tensor, x2: Tensor, return_flow: bool = False):
        g1, c1 = sequence_to_grid(x1)
        g2, c2 = sequence_to_grid(x2)
        f1, f2 = self.predict_flow(g1, g2)
        w1 = bilinear_warp(g1, f1)
        w2 = bilinear_warp(g2, f2)
        out1 = grid_to_sequence(self._fuse(g1, w2), c1)
        out2 = grid_to_sequence(self._fuse(g2, w1), c2)
        if return_flow:
            return out1, out2, (f1, f2)
        return out1, out2


def flow_to_rgb(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Color-wheel rendering of a ``[2, H, W]`` field as ``[H, W, 3]`` uint8.

    Hue is direction, saturation is magnitude; zero flow is mid-gray.
    """
    fx, fy = flow[0], flow[1]
    mag = np.hypot(fx, fy)
    top = max_magnitude if max_magnitude else max(float(mag.max()), 1e-12)
    rgb = np.empty(fx.shape + (3,), dtype=np.uint8)
    for i in range(fx.shape[0]):
        for j in range(fx.shape[1]):
            hue = (np.arctan2(-fy[i, j], -fx[i, j]) / np.pi + 1.0) / 2.0
            sat = min(1.0, mag[i, j] / top) if mag[i, j] > 0 else 0.0
            r, g, b = colorsys.hsv_to_rgb(hue, sat, 0.5 + 0.5 * sat)
            rgb[i, j] = [round(r * 255), round(g * 255), round(b * 255)]
    return rgb


def export_flow(path_stem: str | Path, flow: np.ndarray, scale: int = 8) -> tuple[Path, Path]:
    """Write ``<stem>.ppm`` (color wheel, upsampled) and ``<stem>.txt`` (raw values)."""
    stem = Path(path_stem)
    rgb = flow_to_rgb(flow)
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    ppm = stem.with_suffix(".ppm")
    write_ppm(ppm, rgb)
    txt = stem.with_suffix(".txt")
    h, w = flow.shape[1:]
    lines = [f"# flow field {h}x{w}, columns: row col dx dy (grid cells)"]
    for i in range(h):
        for j in range(w):
            lines.append(f"{i} {j} {flow[0, i, j]:.9e} {flow[1, i, j]:.9e}")
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ppm, txt
