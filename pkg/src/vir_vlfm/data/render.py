"""2-D rasterizer: painter's algorithm over depth order, 2x supersampling."""
from __future__ import annotations

import numpy as np

from .scene import CANVAS, SceneSpec, Viewpoint

BACKGROUND = 0.35
SUPERSAMPLE = 2
STRIPE_PERIOD = 3.0
STRIPE_SHADE = 0.45

PALETTE = {
    "gray": (0.65, 0.65, 0.65),
    "red": (0.9, 0.1, 0.1),
    "blue": (0.15, 0.3, 0.95),
    "green": (0.1, 0.75, 0.2),
    "brown": (0.55, 0.33, 0.12),
    "purple": (0.6, 0.2, 0.85),
    "cyan": (0.15, 0.85, 0.85),
    "yellow": (0.95, 0.9, 0.15),
}


def _sample_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / SUPERSAMPLE
    return np.meshgrid(coords, coords)  # xs, ys with ys varying along rows


def _shape_mask(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    if shape == "cube":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "sphere":
        return dx * dx + dy * dy <= r * r
    # cylinder -> upward triangle with apex at the top of the bounding box
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)


def render(scene: SceneSpec, viewpoint: Viewpoint | None = None, illumination: float = 1.0,
           size: int = CANVAS) -> np.ndarray:
    """Rasterize ``scene`` to ``[3, size, size]`` floats in [0, 1]."""
    viewpoint = viewpoint or Viewpoint()
    xs, ys = _sample_grid(size)
    img = np.full((3,) + xs.shape, BACKGROUND)
    for obj in sorted(scene.objects, key=lambda o: (-o.depth, o.id)):
        cx, cy = viewpoint.apply(obj.x, obj.y)
        dx, dy = xs - cx, ys - cy
        mask = _shape_mask(obj.shape, dx, dy, obj.radius)
        if not mask.any():
            continue
        color = np.asarray(PALETTE[obj.color])
        if obj.texture == "striped":
            dark = np.floor((dx + dy) / STRIPE_PERIOD) % 2 == 1
            for ch in range(3):
                img[ch][mask & ~dark] = color[ch]
                img[ch][mask & dark] = color[ch] * STRIPE_SHADE
        else:
            for ch in range(3):
                img[ch][mask] = color[ch]
    s = SUPERSAMPLE
    img = img.reshape(3, size, s, size, s).mean(axis=(2, 4))
    return np.clip(img * illumination, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """``[3, H, W]`` floats -> ``[H, W, 3]`` bytes."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
