"""Corpus-level caption metrics: BLEU-4, ROUGE-L, CIDEr-D, exact match, IoU-binned reports.

Captions are whitespace-tokenized; no other normalization is applied.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
MISSING = None


@dataclass(frozen=True)
class EvalItem:
    hypothesis: str
    references: tuple[str, ...]
    iou: float | None = None
    change_type: str = "none"

    @property
    def is_distractor(self) -> bool:
        return self.change_type == "none"


def make_corpus(hyps: Sequence[str], refs: Sequence[Sequence[str]], ious=None, types=None) -> list[EvalItem]:
    ious = ious if ious is not None else [None] * len(hyps)
    types = types if types is not None else ["none"] * len(hyps)
    return [EvalItem(h, tuple(r), i, t) for h, r, i, t in zip(hyps, refs, ious, types)]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(corpus) -> None:
    if not corpus:
        raise ValueError("empty corpus")


def bleu4(corpus: Sequence[EvalItem]) -> float:
    """Corpus BLEU with uniform 1-4-gram weights; zero precisions become ``BLEU_EPS``."""
    _check(corpus)
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for item in corpus:
        hyp = item.hypothesis.split()
        refs = [r.split() for r in item.references]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            h = _ngrams(hyp, n)
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            clipped[n - 1] += sum(min(c, best[g]) for g, c in h.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    log_p = 0.0
    for c, t in zip(clipped, totals):
        p = c / t if t > 0 else 0.0
        log_p += math.log(p if p > 0 else BLEU_EPS)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return bp * math.exp(log_p / 4.0)


def _lcs(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hyp: str, refs: Sequence[str], beta: float = ROUGE_BETA) -> float:
    h = hyp.split()
    best = 0.0
    for ref in refs:
        r = ref.split()
        lcs = _lcs(h, r)
        if lcs == 0:
            continue
        p, rec = lcs / len(h), lcs / len(r)
        best = max(best, (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
    return best


def rouge_l(corpus: Sequence[EvalItem]) -> float:
    _check(corpus)
    return sum(rouge_l_sentence(i.hypothesis, i.references) for i in corpus) / len(corpus)


def _cider_vectors(tokens: list[str], df: dict, log_n: float) -> tuple[list[dict], list[float]]:
    vecs, norms = [], []
    for n in range(1, 5):
        vec = {g: c * (log_n - math.log(max(1.0, df.get(g, 0.0)))) for g, c in _ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d_scores(corpus: Sequence[EvalItem], sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-pair CIDEr-D (x10) with document frequencies from the references."""
    if len(corpus) < 2:
        raise ValueError("CIDEr-D needs at least 2 pairs for document frequencies")
    df: Counter = Counter()
    for item in corpus:
        grams = set()
        for ref in item.references:
            toks = ref.split()
            for n in range(1, 5):
                grams.update(_ngrams(toks, n))
        df.update(grams)
    log_n = math.log(float(len(corpus)))
    scores = []
    for item in corpus:
        hyp = item.hypothesis.split()
        hv, hn = _cider_vectors(hyp, df, log_n)
        total = [0.0] * 4
        for ref in item.references:
            rt = ref.split()
            rv, rn = _cider_vectors(rt, df, log_n)
            delta = len(hyp) - len(rt)
            for n in range(4):
                val = sum(min(v, rv[n][g]) * rv[n][g] for g, v in hv[n].items() if g in rv[n])
                if hn[n] != 0 and rn[n] != 0:
                    val /= hn[n] * rn[n]
                total[n] += val * math.exp(-(delta ** 2) / (2 * sigma ** 2))
        scores.append(10.0 * (sum(total) / 4.0) / len(item.references))
    return scores


def cider_d(corpus: Sequence[EvalItem]) -> float:
    s = cider_d_scores(corpus)
    return sum(s) / len(s)


def exact_match(corpus: Sequence[EvalItem]) -> float:
    _check(corpus)
    hits = sum(i.hypothesis.split() in [r.split() for r in i.references] for i in corpus)
    return hits / len(corpus)


# -- reports ------------------------------------------------------------------------------

DEFAULT_BINS = (0.0, 0.25, 0.5, 0.75, 1.0)
SUBSETS = ("total", "scene_change", "distractor")
METRICS = ("bleu4", "rouge_l", "cider_d", "exact_match", "count")


def _bin_labels(edges: Sequence[float]) -> list[str]:
    labels = []
    for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        close = "]" if k == len(edges) - 2 else ")"
        labels.append(f"[{lo:g},{hi:g}{close}")
    return labels


def _bin_of(iou: float | None, edges: Sequence[float]) -> int | None:
    if iou is None:
        return None
    for k in range(len(edges) - 1):
        last = k == len(edges) - 2
        if edges[k] <= iou < edges[k + 1] or (last and iou == edges[k + 1]):
            return k
    return None


def _subset_metrics(items: list[EvalItem], cider: list[float]) -> dict:
    if not items:
        return {m: MISSING for m in METRICS[:-1]} | {"count": 0}
    return {
        "bleu4": bleu4(items),
        "rouge_l": rouge_l(items),
        "cider_d": sum(cider) / len(cider),
        "exact_match": exact_match(items),
        "count": len(items),
    }


def binned_report(corpus: Sequence[EvalItem], edges: Sequence[float] = DEFAULT_BINS) -> dict:
    """``report[metric][subset][bin]``; bin "all" is unbinned, "n/a" holds pairs without an IoU.

    CIDEr-D per-pair scores use document frequencies from the whole corpus; subset
    values are their means.
    """
    _check(corpus)
    if list(edges) != sorted(edges) or edges[0] < 0 or edges[-1] > 1:
        raise ValueError(f"bin edges must ascend within [0, 1], got {list(edges)}")
    cider = cider_d_scores(corpus) if len(corpus) >= 2 else [MISSING] * len(corpus)
    labels = _bin_labels(edges)
    report: dict = {m: {s: {} for s in SUBSETS} for m in METRICS}
    for subset in SUBSETS:
        keep = [k for k, it in enumerate(corpus)
                if subset == "total" or (subset == "distractor") == it.is_distractor]
        groups = {"all": keep}
        for b, label in enumerate(labels):
            groups[label] = [k for k in keep if _bin_of(corpus[k].iou, edges) == b]
        groups["n/a"] = [k for k in keep if _bin_of(corpus[k].iou, edges) is None]
        for label, idx in groups.items():
            cs = [cider[k] for k in idx]
            if any(c is None for c in cs):
                vals = _subset_metrics([corpus[k] for k in idx], [0.0] * len(idx)) | {"cider_d": MISSING}
            else:
                vals = _subset_metrics([corpus[k] for k in idx], cs)
            for m in METRICS:
                report[m][subset][label] = vals[m]
    return report


def format_report(report: dict) -> str:
    """Aligned text table: one row per (subset, bin)."""
    head = f"{'subset':<13}{'iou bin':<13}" + "".join(f"{m:>12}" for m in METRICS)
    lines = [head, "-" * len(head)]
    for subset in SUBSETS:
        for label in report["count"][subset]:
            cells = []
            for m in METRICS:
                v = report[m][subset][label]
                cells.append(f"{'-':>12}" if v is None else (f"{v:>12d}" if m == "count" else f"{v:>12.4f}"))
            lines.append(f"{subset:<13}{label:<13}" + "".join(cells))
    return "\n".join(lines) + "\n"


def write_report(report: dict, stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    txt, js = stem.with_suffix(".txt"), stem.with_suffix(".json")
    txt.write_text(format_report(report), encoding="utf-8")
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return txt, js
