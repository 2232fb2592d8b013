"""Flow-field visualization for trained checkpoints."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .data.dataset import images_of, load_split
from .data.ppm import write_ppm
from .data.render import to_uint8
from .flow import export_flow
from .model import VIRModel, load_model


class VizError(ValueError):
    pass


def pair_flows(model: VIRModel, img1: np.ndarray, img2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted ``(flow1, flow2)``, each ``[B, 2, g, g]``."""
    if model.flow is None:
        raise VizError("checkpoint has no viewpoint registration flow (vrf disabled)")
    with no_grad():
        _, _, (f1, f2) = model.visual_features(img1, img2, return_flow=True)
    return f1.data, f2.data


def direction_spread(flow: np.ndarray) -> float:
    """Circular standard deviation of flow direction over one ``[2, g, g]`` field."""
    ang = np.arctan2(flow[1], flow[0]).ravel()
    r = np.hypot(np.cos(ang).mean(), np.sin(ang).mean())
    return float(np.sqrt(-2.0 * np.log(max(r, 1e-12))))


def viz_flow(checkpoint: str | Path, data_root: str | Path, pair_ids: Sequence[str],
             out_dir: str | Path, split: str = "test") -> list[Path]:
    """Write per pair: side-by-side render, both flow color wheels, raw flow text."""
    model = load_model(checkpoint)
    if model.flow is None:
        raise VizError(f"checkpoint {checkpoint} has no viewpoint registration flow (vrf disabled)")
    records = {r.pair_id: r for r in load_split(data_root, split)}
    missing = [p for p in pair_ids if p not in records]
    if missing:
        raise VizError(f"pair ids not in split {split}: {missing}")
    chosen = [records[p] for p in pair_ids]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a, b = images_of(chosen)
    f1, f2 = pair_flows(model, a, b)
    written = []
    for k, rec in enumerate(chosen):
        side = np.concatenate([to_uint8(rec.before), to_uint8(rec.after)], axis=1)
        path = out / f"{rec.pair_id}_pair.ppm"
        write_ppm(path, side)
        written.append(path)
        for name, f in (("flow1", f1[k]), ("flow2", f2[k])):
            written.extend(export_flow(out / f"{rec.pair_id}_{name}", f))
    return written
