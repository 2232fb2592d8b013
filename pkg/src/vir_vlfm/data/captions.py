"""Template grammar for change captions, pretraining enumerations, and ranking candidates."""
from __future__ import annotations

import itertools

from ..vocab import Vocabulary
from .scene import COLORS, SHAPES, SIZES, TEXTURES, ChangeSpec, SceneObject, SceneSpec, Viewpoint

TEMPLATES = {
    "color": ("the {ref} changed to {value}", "the {ref} turned {value}"),
    "texture": ("the {ref} became {value}", "the {ref} is now {value}"),
    "add": ("a {desc} was added", "a {desc} has appeared"),
    "drop": ("the {ref} is missing", "the {ref} disappeared"),
    "move": ("the {ref} moved", "the {ref} changed its location"),
    "none": ("no change was made", "the two scenes seem identical"),
}

# attribute subsets tried in this order when naming an object; shape is always the noun
_REFERENT_SUBSETS = [(), ("color",), ("size",), ("texture",), ("size", "color"),
                     ("color", "texture"), ("size", "texture"), ("size", "color", "texture")]


class AmbiguousReferent(ValueError):
    pass


def _phrase(obj: SceneObject, attrs: tuple[str, ...]) -> str:
    words = [getattr(obj, a) for a in ("size", "color", "texture") if a in attrs]
    return " ".join(words + [obj.shape])


def referent(scene: SceneSpec, oid: int) -> str:
    """Shortest attribute phrase that picks out object ``oid`` alone."""
    target = scene.by_id(oid)
    for attrs in _REFERENT_SUBSETS:
        keys = attrs + ("shape",)
        matches = [o for o in scene.objects
                   if all(getattr(o, k) == getattr(target, k) for k in keys)]
        if len(matches) == 1:
            return _phrase(target, attrs)
    raise AmbiguousReferent(f"object {oid} is indistinguishable from another object")


def describe(obj: SceneObject) -> str:
    """Full description used for enumerations and added objects (solid is implicit)."""
    words = [obj.size, obj.color] + (["striped"] if obj.texture == "striped" else []) + [obj.shape]
    return " ".join(words)


def caption_templates(change: ChangeSpec, before: SceneSpec, after: SceneSpec | None = None) -> list[str]:
    """Both paraphrases for ``change``; raises AmbiguousReferent when unnameable."""
    forms = TEMPLATES[change.type]
    if change.type == "none":
        return list(forms)
    if change.type == "add":
        if after is None:
            raise ValueError("an 'add' caption needs the after scene")
        new = after.by_id(change.target)
        desc = describe(new)
        if sum(describe(o) == desc for o in after.objects) > 1:
            raise AmbiguousReferent(f"added object duplicates an existing {desc}")
        return [f.format(desc=desc) for f in forms]
    ref = referent(before, change.target)
    return [f.format(ref=ref, value=change.new_value or "") for f in forms]


def enumeration_caption(scene: SceneSpec, viewpoint: Viewpoint | None = None) -> str:
    """Single-image caption listing every object left to right: 'a large red cube a ...'."""
    viewpoint = viewpoint or Viewpoint()
    placed = sorted(scene.objects, key=lambda o: (viewpoint.apply(o.x, o.y)[0], o.id))
    return " ".join("a " + describe(o) for o in placed)


def vocabulary_words() -> list[str]:
    words: list[str] = []
    for forms in TEMPLATES.values():
        for f in forms:
            for w in f.split():
                if not w.startswith("{") and w not in words:
                    words.append(w)
    for group in (SIZES, COLORS, TEXTURES, SHAPES):
        words.extend(w for w in group if w not in words)
    return words


def build_vocabulary() -> Vocabulary:
    return Vocabulary(vocabulary_words())


def candidate_captions(before: SceneSpec) -> list[str]:
    """Every caption a single change to ``before`` could produce (ranking candidates)."""
    out = list(TEMPLATES["none"])
    for obj in before.objects:
        try:
            ref = referent(before, obj.id)
        except AmbiguousReferent:
            continue
        for color in COLORS:
            if color != obj.color:
                out.extend(f.format(ref=ref, value=color) for f in TEMPLATES["color"])
        tex = "striped" if obj.texture == "solid" else "solid"
        out.extend(f.format(ref=ref, value=tex) for f in TEMPLATES["texture"])
        out.extend(f.format(ref=ref) for f in TEMPLATES["drop"])
        out.extend(f.format(ref=ref) for f in TEMPLATES["move"])
    if len(before.objects) < 6:
        for size, color, tex, shape in itertools.product(SIZES, COLORS, TEXTURES, SHAPES):
            desc = " ".join([size, color] + (["striped"] if tex == "striped" else []) + [shape])
            out.extend(f.format(desc=desc) for f in TEMPLATES["add"])
    seen: set[str] = set()
    return [c for c in out if not (c in seen or seen.add(c))]
