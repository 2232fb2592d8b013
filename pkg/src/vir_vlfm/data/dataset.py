"""On-disk before/after datasets.

Layout under the dataset root::

    config.json  vocab.txt  candidates.txt
    {split}.jsonl                         one PairRecord per line
    {split}/{pair_id}_{before|after}.ppm
    pretrain.jsonl, pretrain/{id}.ppm     single images with enumeration captions
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .captions import (AmbiguousReferent, build_vocabulary, caption_templates, enumeration_caption,
                       vocabulary_words)
from .ppm import read_ppm, write_ppm
from .render import from_uint8, render, to_uint8
from .scene import (CANVAS, CHANGE_TYPES, PlacementError, SceneSpec, Viewpoint, apply_change,
                    generate_scene, sample_distractor)

SPLIT_SEED_BASE = {"train": 0, "val": 1_000_000, "test": 2_000_000, "pretrain": 3_000_000}
MAX_RETRIES = 50


@dataclass
class DatasetConfig:
    train: int = 2000
    val: int = 200
    test: int = 400
    pretrain: int = 6000
    distractor_fraction: float = 0.5
    shift_bound: float = 4.0
    eval_shifts: list[float] = field(default_factory=lambda: [0.0, 2.0, 4.0, 8.0])
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class PairRecord:
    pair_id: str
    change_type: str
    captions: list[str]
    viewpoint_shift: tuple[float, float]
    rotation: float
    illumination: float
    unchanged_iou: float | None
    before_scene: SceneSpec
    after_scene: SceneSpec
    target: int | None = None
    before: np.ndarray | None = None
    after: np.ndarray | None = None

    @property
    def viewpoint(self) -> Viewpoint:
        return Viewpoint(self.viewpoint_shift[0], self.viewpoint_shift[1], self.rotation)

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "change_type": self.change_type,
            "captions": self.captions,
            "viewpoint_shift": list(self.viewpoint_shift),
            "rotation": self.rotation,
            "illumination": self.illumination,
            "unchanged_iou": self.unchanged_iou,
            "target": self.target,
            "before_scene": self.before_scene.to_json(),
            "after_scene": self.after_scene.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PairRecord":
        return cls(pair_id=d["pair_id"], change_type=d["change_type"], captions=list(d["captions"]),
                   viewpoint_shift=tuple(d["viewpoint_shift"]), rotation=d["rotation"],
                   illumination=d["illumination"], unchanged_iou=d["unchanged_iou"],
                   before_scene=SceneSpec.from_json(d["before_scene"]),
                   after_scene=SceneSpec.from_json(d["after_scene"]), target=d.get("target"))


# -- geometry ------------------------------------------------------------------------

def box_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """IoU of boxes given as (x0, y0, x1, y1)."""
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _clip_box(cx: float, cy: float, r: float) -> tuple[float, float, float, float]:
    return (min(max(cx - r, 0.0), CANVAS), min(max(cy - r, 0.0), CANVAS),
            min(max(cx + r, 0.0), CANVAS), min(max(cy + r, 0.0), CANVAS))


def unchanged_iou(before: SceneSpec, after: SceneSpec, viewpoint: Viewpoint,
                  changed: int | None = None) -> float | None:
    """Mean bounding-box IoU of objects untouched by the change; None when there are none."""
    after_ids = {o.id: o for o in after.objects}
    ious = []
    for o in before.objects:
        a = after_ids.get(o.id)
        if a is None or o.id == changed or a != o:
            continue
        box_b = _clip_box(o.x, o.y, o.radius)
        ax, ay = viewpoint.apply(a.x, a.y)
        ious.append(box_iou(box_b, _clip_box(ax, ay, a.radius)))
    return float(np.mean(ious)) if ious else None


# -- generation ------------------------------------------------------------------------

def make_pair(seed_key: list[int], change_type: str, shift_bound: float,
              pair_id: str) -> PairRecord:
    """One labelled pair; retries with derived seeds until placement and naming succeed."""
    last_err: Exception | None = None
    for attempt in range(MAX_RETRIES):
        seed = int(np.random.SeedSequence(seed_key + [attempt]).generate_state(1)[0])
        try:
            before = generate_scene(seed)
            if change_type == "add" and len(before.objects) == 6:
                before = generate_scene(seed, 5)
            after, change = apply_change(before, seed, change_type, shift_bound)
            captions = caption_templates(change, before, after)
        except (PlacementError, AmbiguousReferent, ValueError) as err:
            last_err = err
            continue
        vp = change.viewpoint
        return PairRecord(
            pair_id=pair_id, change_type=change_type, captions=captions,
            viewpoint_shift=(vp.dx, vp.dy), rotation=vp.rotation, illumination=change.illumination,
            unchanged_iou=unchanged_iou(before, after, vp, change.target),
            before_scene=before, after_scene=after, target=change.target,
            before=render(before), after=render(after, vp, change.illumination))
    raise RuntimeError(f"pair {pair_id}: no valid sample after {MAX_RETRIES} retries ({last_err})")


def split_types(n: int, distractor_fraction: float, rng: np.random.Generator) -> list[str]:
    """Distractor-only share, remaining pairs cycled through the five change types, shuffled."""
    n_none = int(round(n * distractor_fraction))
    types = ["none"] * n_none + [CHANGE_TYPES[i % len(CHANGE_TYPES)] for i in range(n - n_none)]
    return [types[i] for i in rng.permutation(n)]


def generate_split(name: str, n: int, cfg: DatasetConfig, shift_bound: float | None = None,
                   seed_split: str | None = None) -> list[PairRecord]:
    base = SPLIT_SEED_BASE[seed_split or name]
    rng = np.random.default_rng([cfg.seed, base, 0x7E5])
    types = split_types(n, cfg.distractor_fraction, rng)
    bound = cfg.shift_bound if shift_bound is None else shift_bound
    return [make_pair([cfg.seed, base + i], t, bound, f"{name}_{i:05d}") for i, t in enumerate(types)]


def _write_split(root: Path, name: str, records: list[PairRecord]) -> None:
    d = root / name
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        write_ppm(d / f"{rec.pair_id}_before.ppm", to_uint8(rec.before))
        write_ppm(d / f"{rec.pair_id}_after.ppm", to_uint8(rec.after))
        lines.append(json.dumps(rec.to_json(), sort_keys=True))
    (root / f"{name}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def eval_split_name(shift: float) -> str:
    return f"test_s{shift:g}"


def build_dataset(root: str | Path, cfg: DatasetConfig, log=print) -> Path:
    """Write every split; the result is a pure function of ``cfg``."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create dataset directory {root}: {err}") from err
    (root / "config.json").write_text(json.dumps(cfg.to_json(), sort_keys=True, indent=2) + "\n")
    vocab = build_vocabulary()
    vocab.save(root / "vocab.txt")
    (root / "candidates.txt").write_text("\n".join(vocabulary_words()) + "\n", encoding="utf-8")
    for name in ("train", "val", "test"):
        n = getattr(cfg, name)
        log(f"generating {name}: {n} pairs")
        _write_split(root, name, generate_split(name, n, cfg))
    for s in cfg.eval_shifts:
        name = eval_split_name(s)
        log(f"generating {name}: {cfg.test} pairs at shift bound {s:g}")
        _write_split(root, name, generate_split(name, cfg.test, cfg, shift_bound=s, seed_split="test"))
    _write_pretrain(root, cfg, log)
    return root


def _write_pretrain(root: Path, cfg: DatasetConfig, log=print) -> None:
    log(f"generating pretrain: {cfg.pretrain} single images")
    d = root / "pretrain"
    d.mkdir(parents=True, exist_ok=True)
    base = SPLIT_SEED_BASE["pretrain"]
    lines = []
    for i in range(cfg.pretrain):
        seed = int(np.random.SeedSequence([cfg.seed, base + i]).generate_state(1)[0])
        scene = generate_scene(seed)
        vp, illum = sample_distractor(np.random.default_rng([seed, 0xD15]), cfg.shift_bound)
        img_id = f"pretrain_{i:05d}"
        write_ppm(d / f"{img_id}.ppm", to_uint8(render(scene, vp, illum)))
        lines.append(json.dumps({"id": img_id, "caption": enumeration_caption(scene, vp),
                                 "scene": scene.to_json()}, sort_keys=True))
    (root / "pretrain.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- loading ---------------------------------------------------------------------------

def load_split(root: str | Path, name: str, with_images: bool = True) -> list[PairRecord]:
    root = Path(root)
    path = root / f"{name}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"dataset split not found: {path}")
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = PairRecord.from_json(json.loads(line))
        if with_images:
            rec.before = from_uint8(read_ppm(root / name / f"{rec.pair_id}_before.ppm"))
            rec.after = from_uint8(read_ppm(root / name / f"{rec.pair_id}_after.ppm"))
        records.append(rec)
    return records


def load_pretrain(root: str | Path) -> tuple[np.ndarray, list[str]]:
    root = Path(root)
    path = root / "pretrain.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"pretrain split not found: {path}")
    images, captions = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            images.append(from_uint8(read_ppm(root / "pretrain" / f"{d['id']}.ppm")))
            captions.append(d["caption"])
    return np.stack(images), captions


def images_of(records: list[PairRecord]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([r.before for r in records]), np.stack([r.after for r in records])


def shift_magnitude(rec: PairRecord) -> float:
    return math.hypot(*rec.viewpoint_shift)
