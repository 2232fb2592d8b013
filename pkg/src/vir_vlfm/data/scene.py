"""Scene and change specifications for the procedural before/after generator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

CANVAS = 64
SHAPES = ("cube", "sphere", "cylinder")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
TEXTURES = ("solid", "striped")
SIZES = ("small", "large")
RADIUS = {"small": 4.0, "large": 6.5}
MAX_RADIUS = max(RADIUS.values())
MIN_SEPARATION = 1.5 * MAX_RADIUS
CHANGE_TYPES = ("color", "texture", "add", "drop", "move")
ALL_CHANGE_TYPES = CHANGE_TYPES + ("none",)
PLACEMENT_ATTEMPTS = 1000


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneObject:
    id: int
    shape: str
    color: str
    texture: str
    size: str
    x: float
    y: float
    depth: int

    @property
    def radius(self) -> float:
        return RADIUS[self.size]

    def attributes(self) -> tuple[str, str, str, str]:
        return (self.size, self.color, self.texture, self.shape)


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]

    def to_json(self) -> list[dict]:
        return [asdict(o) for o in self.objects]

    @classmethod
    def from_json(cls, items: list[dict]) -> "SceneSpec":
        return cls(tuple(SceneObject(**o) for o in items))

    def by_id(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)


@dataclass(frozen=True)
class Viewpoint:
    dx: float = 0.0
    dy: float = 0.0
    rotation: float = 0.0  # degrees, about the canvas center

    @property
    def is_identity(self) -> bool:
        return self.dx == 0.0 and self.dy == 0.0 and self.rotation == 0.0

    def apply(self, x: float, y: float) -> tuple[float, float]:
        c = CANVAS / 2.0
        t = math.radians(self.rotation)
        ux, uy = x - c, y - c
        return (c + math.cos(t) * ux - math.sin(t) * uy + self.dx,
                c + math.sin(t) * ux + math.cos(t) * uy + self.dy)


@dataclass(frozen=True)
class ChangeSpec:
    type: str
    target: int | None = None  # object id (before scene for edits, after scene for "add")
    new_value: str | None = None
    displacement: tuple[float, float] | None = None
    viewpoint: Viewpoint = field(default_factory=Viewpoint)
    illumination: float = 1.0


def _random_object(rng: np.random.Generator, oid: int, depth: int, x: float, y: float,
                   size: str | None = None) -> SceneObject:
    return SceneObject(
        id=oid,
        shape=SHAPES[rng.integers(len(SHAPES))],
        color=COLORS[rng.integers(len(COLORS))],
        texture=TEXTURES[rng.integers(len(TEXTURES))],
        size=size if size is not None else SIZES[rng.integers(len(SIZES))],
        x=x, y=y, depth=depth,
    )


def _sample_position(rng: np.random.Generator, radius: float, others: list[tuple[float, float]],
                     accept=lambda x, y: True) -> tuple[float, float] | None:
    lo, hi = radius + 1.0, CANVAS - radius - 1.0
    for _ in range(PLACEMENT_ATTEMPTS):
        x = round(float(rng.uniform(lo, hi)) * 2) / 2
        y = round(float(rng.uniform(lo, hi)) * 2) / 2
        if all(math.hypot(x - ox, y - oy) >= MIN_SEPARATION for ox, oy in others) and accept(x, y):
            return x, y
    return None


def generate_scene(seed: int, object_count: int | None = None) -> SceneSpec:
    """Deterministic scene of 3-6 objects (count drawn from the seed when omitted)."""
    rng = np.random.default_rng([seed, 0x5CE])
    count = int(rng.integers(3, 7)) if object_count is None else object_count
    if not 1 <= count <= 6:
        raise ValueError(f"object_count must be in 1..6, got {count}")
    objects: list[SceneObject] = []
    depths = rng.permutation(count)
    for i in range(count):
        size = SIZES[rng.integers(len(SIZES))]
        pos = _sample_position(rng, RADIUS[size], [(o.x, o.y) for o in objects])
        if pos is None:
            raise PlacementError(f"could not place object {i} for seed {seed}")
        objects.append(_random_object(rng, i, int(depths[i]), pos[0], pos[1], size))
    return SceneSpec(tuple(objects))


def sample_distractor(rng: np.random.Generator, shift_bound: float) -> tuple[Viewpoint, float]:
    """Viewpoint shift in [-S, S] px per axis, rotation in [-5, 5] deg, illumination in [0.8, 1.2].

    The shift is ``S * u`` with ``u`` drawn independently of ``S``, so a fixed seed
    gives proportionally larger shifts for larger bounds.
    """
    u = rng.uniform(-1.0, 1.0, 2)
    rot = float(rng.uniform(-5.0, 5.0))
    illum = float(rng.uniform(0.8, 1.2))
    return Viewpoint(float(shift_bound * u[0]), float(shift_bound * u[1]), rot), illum


def apply_change(scene: SceneSpec, rng_seed: int, change_type: str,
                 shift_bound: float = 4.0) -> tuple[SceneSpec, ChangeSpec]:
    """After-scene differing from ``scene`` by exactly one change, plus its distractor."""
    if change_type not in ALL_CHANGE_TYPES:
        raise ValueError(f"unknown change type {change_type!r}")
    rng = np.random.default_rng([rng_seed, 0xC4A])
    # the distractor stream is separate so it does not depend on the change type
    viewpoint, illum = sample_distractor(np.random.default_rng([rng_seed, 0xD15]), shift_bound)
    objs = list(scene.objects)
    if change_type in ("color", "texture", "drop", "move") and not objs:
        raise ValueError(f"cannot apply {change_type!r} to an empty scene")

    if change_type == "none":
        return scene, ChangeSpec("none", viewpoint=viewpoint, illumination=illum)

    if change_type == "add":
        if len(objs) >= 6:
            raise ValueError("scene already holds the maximum of 6 objects")
        oid = max((o.id for o in objs), default=-1) + 1
        size = SIZES[rng.integers(len(SIZES))]
        pos = _sample_position(rng, RADIUS[size], [(o.x, o.y) for o in objs])
        if pos is None:
            raise PlacementError(f"no room to add an object (seed {rng_seed})")
        new = _random_object(rng, oid, len(objs), pos[0], pos[1], size)
        after = SceneSpec(tuple(objs + [new]))
        return after, ChangeSpec("add", target=oid, viewpoint=viewpoint, illumination=illum)

    k = int(rng.integers(len(objs)))
    target = objs[k]
    if change_type == "drop":
        after = SceneSpec(tuple(o for o in objs if o.id != target.id))
        return after, ChangeSpec("drop", target=target.id, viewpoint=viewpoint, illumination=illum)

    if change_type == "color":
        choices = [c for c in COLORS if c != target.color]
        new_color = choices[rng.integers(len(choices))]
        objs[k] = replace(target, color=new_color)
        return SceneSpec(tuple(objs)), ChangeSpec("color", target=target.id, new_value=new_color,
                                                  viewpoint=viewpoint, illumination=illum)

    if change_type == "texture":
        new_tex = "striped" if target.texture == "solid" else "solid"
        objs[k] = replace(target, texture=new_tex)
        return SceneSpec(tuple(objs)), ChangeSpec("texture", target=target.id, new_value=new_tex,
                                                  viewpoint=viewpoint, illumination=illum)

    # move: at least the object's own radius away, clear of the other objects
    others = [(o.x, o.y) for o in objs if o.id != target.id]
    pos = _sample_position(rng, target.radius, others,
                           accept=lambda x, y: math.hypot(x - target.x, y - target.y) >= target.radius)
    if pos is None:
        raise PlacementError(f"no room to move object {target.id} (seed {rng_seed})")
    objs[k] = replace(target, x=pos[0], y=pos[1])
    return SceneSpec(tuple(objs)), ChangeSpec(
        "move", target=target.id, displacement=(pos[0] - target.x, pos[1] - target.y),
        viewpoint=viewpoint, illumination=illum)
