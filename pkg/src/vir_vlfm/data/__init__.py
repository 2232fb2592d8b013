"""Procedural before/after scene pairs with change captions."""
from .captions import (AmbiguousReferent, build_vocabulary, candidate_captions, caption_templates,
                       enumeration_caption, referent)
from .dataset import (DatasetConfig, PairRecord, box_iou, build_dataset, eval_split_name, load_pretrain,
                      load_split, make_pair, unchanged_iou)
from .render import render
from .scene import (ALL_CHANGE_TYPES, CHANGE_TYPES, ChangeSpec, PlacementError, SceneObject, SceneSpec,
                    Viewpoint, apply_change, generate_scene)

__all__ = [
    "ALL_CHANGE_TYPES", "AmbiguousReferent", "CHANGE_TYPES", "ChangeSpec", "DatasetConfig", "PairRecord",
    "PlacementError", "SceneObject", "SceneSpec", "Viewpoint", "apply_change", "box_iou",
    "build_dataset", "build_vocabulary", "candidate_captions", "caption_templates",
    "enumeration_caption", "eval_split_name", "generate_scene", "load_pretrain", "load_split",
    "make_pair", "referent", "render", "unchanged_iou",
]
