"""Checkpoint evaluation: caption ranking and beam search, reported per IoU bin."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .data.captions import candidate_captions
from .data.dataset import images_of, load_split
from .metrics import DEFAULT_BINS, binned_report, make_corpus, write_report
from .model import VIRModel, load_model
from .vocab import Vocabulary

DECODERS = ("rank", "beam", "greedy")


@dataclass
class Predictions:
    pair_ids: list[str]
    hypotheses: dict[str, list[str]]  # decoder name -> captions


def _prefixes(model: VIRModel, records, batch: int) -> np.ndarray:
    out = []
    for i in range(0, len(records), batch):
        a, b = images_of(records[i:i + batch])
        with no_grad():
            out.append(model.prefix(a, b).data)
    return np.concatenate(out, axis=0)


def predict(model: VIRModel, vocab: Vocabulary, records, decoders: Sequence[str] = ("rank",),
            batch: int = 50) -> Predictions:
    """Hypothesis captions for every record under each requested decoder."""

    unknown = set(decoders) - set(DECODERS)
    if unknown:
        raise ValueError(f"unknown decoders {sorted(unknown)}; choose from {DECODERS}")
    prefixes = _prefixes(model, records, batch)
    hyps: dict[str, list[str]] = {d: [] for d in decoders}
    dec = model.decoder
    if "greedy" in decoders:
        for i in range(0, len(records), batch):
            seqs = dec.greedy(Tensor(prefixes[i:i + batch]))
            hyps["greedy"].extend(vocab.decode(s) for s in seqs)
    for rec, pre in zip(records, prefixes):
        if "rank" in decoders:
            cands = candidate_captions(rec.before_scene)
            ranked = dec.rank(Tensor(pre[None]), [vocab.encode(c) for c in cands])
            hyps["rank"].append(vocab.decode(ranked[0][0]))
        if "beam" in decoders:
            seq, _ = dec.generate(Tensor(pre))
            hyps["beam"].append(vocab.decode(seq))
    return Predictions([r.pair_id for r in records], hyps)


def evaluate(checkpoint: str | Path, data_root: str | Path, split: str = "test",
             decoders: Sequence[str] = ("rank",), out_dir: str | Path | None = None,
             edges: Sequence[float] = DEFAULT_BINS, limit: int | None = None) -> dict:
    """Reports keyed by decoder name; optionally written as text + JSON under ``out_dir``."""
    model = load_model(checkpoint)
    vocab = Vocabulary.load(Path(data_root) / "vocab.txt")
    records = load_split(data_root, split)
    if limit:
        records = records[:limit]
    return evaluate_model(model, vocab, records, decoders, out_dir, edges, tag=split)


def evaluate_model(model: VIRModel, vocab: Vocabulary, records, decoders=("rank",),
                   out_dir: str | Path | None = None, edges=DEFAULT_BINS, tag: str = "test") -> dict:
    preds = predict(model, vocab, records, decoders)
    refs = [r.captions for r in records]
    ious = [r.unchanged_iou for r in records]
    types = [r.change_type for r in records]
    reports = {}
    for name, hyps in preds.hypotheses.items():
        reports[name] = binned_report(make_corpus(hyps, refs, ious, types), edges)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rep in reports.items():
            write_report(rep, out / f"{tag}_{name}")
        rows = [{"pair_id": pid, **{n: h[k] for n, h in preds.hypotheses.items()}, "references": refs[k]}
                for k, pid in enumerate(preds.pair_ids)]
        (out / f"{tag}_predictions.jsonl").write_text(
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")
    return reports


def headline(report: dict) -> dict:
    """Unbinned totals of every metric."""
    return {m: report[m]["total"]["all"] for m in report}
