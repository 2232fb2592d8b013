"""Ablation grid: module combinations, fusion operators and viewpoint-shift robustness.

Each run adapts the shared pretrained backbone under one switch setting and one
seed, then ranks captions on the test split. The shift-robustness pair (full and
no_vrf) is also evaluated on every ``test_s{S}`` split. Results are cached per
run, so an interrupted grid resumes where it stopped.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.dataset import DatasetConfig, eval_split_name, load_split
from .evaluate import evaluate_model, headline
from .model import load_model
from .train import TrainConfig, adapt
from .vocab import Vocabulary

RUNS: dict[str, dict] = {
    "baseline": {"adapters": False, "fused_adapters": False, "vrf": False, "sem": False},
    "faie": {"vrf": False, "sem": False},
    "faie_vrf": {"sem": False},
    "full": {},
    "no_vrf": {"vrf": False},
    "fusion_subtract": {"fusion": "subtract"},
    "fusion_concat": {"fusion": "concat"},
}
MODULE_ORDER = ("full", "faie_vrf", "faie", "baseline")
FUSION_RUNS = {"add": "full", "subtract": "fusion_subtract", "concat": "fusion_concat"}
SHIFT_RUNS = ("full", "no_vrf")  # the only runs evaluated on every test_s{S} split


def run_config(name: str, seed: int, pretrain: str, epochs: int, train_limit: int | None,
               lr: float | None = None, val_limit: int | None = None) -> TrainConfig:
    extra = {"lr": lr} if lr is not None else {}
    return TrainConfig(phase="adapt", epochs=epochs, seed=seed, pretrain_checkpoint=str(pretrain),
                       train_limit=train_limit, val_limit=val_limit, **RUNS[name], **extra)


def run_one(name: str, seed: int, data_root: str | Path, out_root: str | Path, pretrain: str,
            epochs: int, train_limit: int | None, lr: float | None = None,
            val_limit: int | None = None) -> dict:
    cfg = run_config(name, seed, pretrain, epochs, train_limit, lr, val_limit)
    out = Path(out_root) / f"{name}_s{seed}"
    cache = out / "results.json"
    if cache.exists():
        cached = json.loads(cache.read_text())
        if cached.get("config") == cfg.to_json():
            return cached
    print(f"[grid] {name} seed {seed}", file=sys.stderr, flush=True)
    best = adapt(cfg, data_root, out, echo=False)
    model = load_model(best)
    vocab = Vocabulary.load(Path(data_root) / "vocab.txt")
    shifts = DatasetConfig(**json.loads((Path(data_root) / "config.json").read_text())).eval_shifts
    result = {"config": cfg.to_json(), "splits": {}}
    splits = ["test"] + ([eval_split_name(s) for s in shifts] if name in SHIFT_RUNS else [])
    for split in splits:
        reports = evaluate_model(model, vocab, load_split(data_root, split), ("rank",), out, tag=split)
        result["splits"][split] = headline(reports["rank"])
    cache.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def _stats(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "values": [float(v) for v in arr]}


def summarize(results: dict[str, list[dict]]) -> dict:
    """Per-run metric statistics across seeds, plus the directional comparisons."""
    summary: dict = {"runs": {}}
    for name, rs in results.items():
        splits = set.intersection(*(set(r["splits"]) for r in rs))
        summary["runs"][name] = {
            split: {m: _stats([r["splits"][split][m] for r in rs]) for m in ("cider_d", "exact_match", "bleu4")}
            for split in splits
        }
    runs = summary["runs"]

    def cider(name):
        return runs[name]["test"]["cider_d"]["mean"]

    if all(n in runs for n in MODULE_ORDER):
        means = [cider(n) for n in MODULE_ORDER]
        spread = runs["full"]["test"]["cider_d"]["std"]
        summary["module_ordering"] = {
            "order": list(MODULE_ORDER), "cider_d": means,
            "monotone": all(a >= b for a, b in zip(means, means[1:])),
            "full_minus_baseline": means[0] - means[-1], "full_std": spread,
            "margin_ok": means[0] - means[-1] > spread,
        }
    if all(n in runs for n in FUSION_RUNS.values()):
        vals = {op: cider(n) for op, n in FUSION_RUNS.items()}
        summary["fusion"] = {"cider_d": vals, "add_best": vals["add"] >= max(vals["subtract"], vals["concat"])}
    lo, hi = eval_split_name(0.0), eval_split_name(8.0)
    if all(n in runs and lo in runs[n] and hi in runs[n] for n in ("full", "no_vrf")):
        def drop(name):
            return [a - b for a, b in zip(runs[name][lo]["exact_match"]["values"],
                                          runs[name][hi]["exact_match"]["values"])]
        d_full, d_novrf = drop("full"), drop("no_vrf")
        summary["shift_robustness"] = {
            "drop_full": d_full, "drop_no_vrf": d_novrf,
            "mean_drop_full": float(np.mean(d_full)), "mean_drop_no_vrf": float(np.mean(d_novrf)),
            "no_vrf_drops_more": float(np.mean(d_novrf)) > float(np.mean(d_full)),
        }
    return summary


def run_grid(data_root: str | Path, out_root: str | Path, pretrain: str, seeds: Sequence[int] = (0, 1, 2),
             epochs: int = 15, train_limit: int | None = 1000, lr: float | None = None,
             only: Sequence[str] | None = None, val_limit: int | None = None) -> dict:
    names = list(only) if only else list(RUNS)
    unknown = set(names) - set(RUNS)
    if unknown:
        raise ValueError(f"unknown runs {sorted(unknown)}; choose from {sorted(RUNS)}")
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    results = {n: [run_one(n, s, data_root, out, pretrain, epochs, train_limit, lr, val_limit) for s in seeds]
               for n in names}
    summary = summarize(results)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
