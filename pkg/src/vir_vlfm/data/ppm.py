"""Binary PPM (P6) images through Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write ``[H, W, 3]`` uint8 as P6."""
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3] uint8, got {rgb.shape} {rgb.dtype}")
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PPM")


def read_ppm(path: str | Path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        if im.format != "PPM" or im.mode != "RGB":
            raise ValueError(f"{path}: not an RGB P6 image ({im.format}, {im.mode})")
        return np.asarray(im, dtype=np.uint8).copy()


def is_p6(path: str | Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(2) == b"P6"
