"""Two-phase training: pretrain a backbone from scratch, then freeze it and adapt."""
from __future__ import annotations

import json
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import checkpoint as ckpt
from .autodiff import no_grad
from .bridge import BridgeConfig
from .data.dataset import images_of, load_pretrain, load_split
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .metrics import exact_match, make_corpus
from .model import PRETRAIN_ONLY, ModelConfig, VIRModel, frozen_bytes, is_adapt_trainable
from .optim import AdamW, lr_at
from .vocab import Vocabulary


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase: str = "adapt"
    epochs: int = 40
    batch_size: int = 16
    lr: float = 5e-5
    min_lr: float = 1e-5
    weight_decay: float = 0.05
    warmup_steps: int | None = None  # None: 5% of total steps
    cosine: bool = True
    seed: int = 0
    # ablation switches (defaults = full model)
    adapters: bool = True
    fused_adapters: bool = True
    vrf: bool = True
    sem: bool = True
    fusion: str = "add"
    emphasis_input: str = "self-other"
    # model sizes
    width: int = 64
    depth: int = 8
    heads: int = 4
    bottleneck: int = 16
    fused_every: int | None = 2
    queries: int = 8
    qformer_depth: int = 2
    decoder_depth: int = 2
    max_len: int = 32
    # data
    pretrain_checkpoint: str | None = None
    train_limit: int | None = None
    val_limit: int | None = None
    pretrain_limit: int | None = None
    text_weight: float = 1.0
    check_frozen: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise TrainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)

    def model_config(self, vocab_size: int) -> ModelConfig:
        enc = EncoderConfig(width=self.width, depth=self.depth, heads=self.heads,
                            bottleneck=self.bottleneck, fused_every=self.fused_every,
                            adapters=self.adapters, fused_adapters=self.fused_adapters)
        br = BridgeConfig(queries=self.queries, width=self.width, depth=self.qformer_depth,
                          heads=self.heads, emphasis=self.sem, emphasis_input=self.emphasis_input)
        dec = DecoderConfig(width=self.width, depth=self.decoder_depth, heads=self.heads,
                            max_len=self.max_len, prefix_len=2 * self.queries)
        cfg = ModelConfig(enc, br, dec, vocab_size, "adapt", self.vrf, self.fusion)
        return cfg if self.phase == "adapt" else cfg.pretrain_variant()


class JsonlLog:
    """Deterministic JSON-lines training log (no wall-clock values)."""

    def __init__(self, path: Path, echo: bool = True):
        self.path = path
        self.echo = echo
        path.write_text("", encoding="utf-8")

    def write(self, **record) -> None:
        line = json.dumps(record, sort_keys=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if self.echo:
            print(line, file=sys.stderr, flush=True)


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _check_frozen_grads(model: VIRModel) -> float:
    worst = 0.0
    for name, p in model.named_parameters():
        if not p.requires_grad and p.grad is not None:
            worst = max(worst, float(np.abs(p.grad).max()))
    return worst


def validate_greedy(model: VIRModel, vocab: Vocabulary, records, batch: int = 50) -> float:
    hyps = []
    for i in range(0, len(records), batch):
        chunk = records[i:i + batch]
        a, b = images_of(chunk)
        with no_grad():
            prefix = model.prefix(a, b)
        hyps.extend(vocab.decode(s) for s in model.decoder.greedy(prefix))
    return exact_match(make_corpus(hyps, [r.captions for r in records]))


def validate_loss(model: VIRModel, a: np.ndarray, b: np.ndarray, targets, batch: int = 50) -> float:
    """Teacher-forced caption loss averaged over every reference of every pair."""
    total, count = 0.0, 0
    for k in range(max(len(t) for t in targets)):
        rows = [i for i, t in enumerate(targets) if k < len(t)]
        for j in range(0, len(rows), batch):
            idx = rows[j:j + batch]
            with no_grad():
                total += model.loss(a[idx], b[idx], [targets[i][k] for i in idx]).item() * len(idx)
            count += len(idx)
    return total / count


def pretrain(cfg: TrainConfig, data_root: str | Path, out_dir: str | Path, echo: bool = True) -> Path:
    """Phase 1: encoder (no adapters), query transformer, projection, decoder from scratch.

    Objective: single-image enumeration captions plus a change-caption loss whose
    prefix comes from each caption's own bag of words (the text prior), so the
    frozen decoder later responds to prefix content under the change instruction.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary.load(Path(data_root) / "vocab.txt")
    images, captions = load_pretrain(data_root)
    if cfg.pretrain_limit:
        images, captions = images[:cfg.pretrain_limit], captions[:cfg.pretrain_limit]
    held = max(1, len(images) // 20)
    tr_img, tr_cap = images[:-held], [vocab.encode(c) for c in captions[:-held]]
    va_img, va_cap = images[-held:], captions[-held:]
    train_recs = load_split(data_root, "train", with_images=False)
    texts = [vocab.encode(c) for r in train_recs for c in r.captions]

    model = VIRModel(cfg.model_config(len(vocab)), seed=cfg.seed)
    named = list(model.named_parameters())
    opt = AdamW(named, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 0x9E7])
    steps_per_epoch = -(-len(tr_img) // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warmup = cfg.warmup_steps if cfg.warmup_steps is not None else max(1, total // 20)
    log = JsonlLog(out / "log.jsonl", echo)
    (out / "train_config.json").write_text(json.dumps(cfg.to_json(), sort_keys=True, indent=2) + "\n")
    step = 0
    t0 = time.time()
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(tr_img), cfg.batch_size, rng):
            text_idx = rng.integers(len(texts), size=len(idx))
            lr = lr_at(step, total, cfg.lr, cfg.min_lr, warmup, cfg.cosine)
            loss = model.caption_loss_single(tr_img[idx], [tr_cap[i] for i in idx])
            if cfg.text_weight:
                loss = loss + model.text_loss([texts[i] for i in text_idx]) * cfg.text_weight
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            losses.append(loss.item())
            step += 1
        hyps = []
        for i in range(0, len(va_img), 50):
            with no_grad():
                pre = model.single_prefix(va_img[i:i + 50])
            hyps.extend(vocab.decode(s) for s in model.decoder.greedy(pre, instruction="caption"))
        em = exact_match(make_corpus(hyps, [[c] for c in va_cap]))
        log.write(epoch=epoch, step=step, split="train", loss=float(np.mean(losses)), lr=lr)
        log.write(epoch=epoch, step=step, split="val", exact_match=em)
        print(f"[pretrain] epoch {epoch} loss {np.mean(losses):.4f} val exact {em:.3f} "
              f"({time.time() - t0:.0f}s)", file=sys.stderr, flush=True)
        model.save(out / "last.ckpt")
    model.save(out / "pretrain.ckpt")
    return out / "pretrain.ckpt"


def build_adapt_model(cfg: TrainConfig, vocab_size: int) -> VIRModel:
    """Adapt-phase model with pretrained weights loaded and the backbone frozen."""
    if not cfg.pretrain_checkpoint:
        raise TrainError("adapt phase requires pretrain_checkpoint")
    path = Path(cfg.pretrain_checkpoint)
    if not path.exists():
        raise TrainError(f"pretrain checkpoint not found: {path}")
    model = VIRModel(cfg.model_config(vocab_size), seed=cfg.seed)
    state = {n: v for n, v in ckpt.load(path).items() if not n.startswith(PRETRAIN_ONLY)}
    names = {n for n, _ in model.named_parameters()}
    extra = sorted(set(state) - names)
    if extra:
        raise TrainError(f"pretrain checkpoint has names the model lacks, e.g. {extra[0]}")
    missing = model.load_state_dict(state, strict=False)
    bad = [n for n in missing if not is_adapt_trainable(n)]
    if bad:
        raise TrainError(f"pretrain checkpoint lacks frozen parameter {bad[0]}")
    model.set_adapt_partition()
    return model


def adapt(cfg: TrainConfig, data_root: str | Path, out_dir: str | Path, echo: bool = True) -> Path:
    """Phase 2: train adapters, fused adapters, flow, emphasis, projection, instruction."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary.load(Path(data_root) / "vocab.txt")
    train = load_split(data_root, "train")
    val = load_split(data_root, "val")
    if cfg.train_limit:
        train = train[:cfg.train_limit]
    if cfg.val_limit:
        val = val[:cfg.val_limit]
    tr_a, tr_b = images_of(train)
    targets = [[vocab.encode(c) for c in r.captions] for r in train]
    va_a, va_b = images_of(val)
    va_targets = [[vocab.encode(c) for c in r.captions] for r in val]

    model = build_adapt_model(cfg, len(vocab))
    frozen_before = frozen_bytes(model)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    opt = AdamW(named, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 0xAD4])
    steps_per_epoch = -(-len(train) // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warmup = cfg.warmup_steps if cfg.warmup_steps is not None else max(1, total // 20)
    log = JsonlLog(out / "log.jsonl", echo)
    (out / "train_config.json").write_text(json.dumps(cfg.to_json(), sort_keys=True, indent=2) + "\n")
    step, best = 0, np.inf
    t0 = time.time()
    for epoch in range(cfg.epochs):
        losses, frozen_max = [], 0.0
        for idx in _batches(len(train), cfg.batch_size, rng):
            pick = rng.integers(2, size=len(idx))
            lr = lr_at(step, total, cfg.lr, cfg.min_lr, warmup, cfg.cosine)
            loss = model.loss(tr_a[idx], tr_b[idx],
                              [targets[i][k % len(targets[i])] for i, k in zip(idx, pick)])
            model.zero_grad()
            loss.backward()
            if cfg.check_frozen:
                frozen_max = max(frozen_max, _check_frozen_grads(model))
            opt.step(lr)
            losses.append(loss.item())
            step += 1
        em = validate_greedy(model, vocab, val)
        val_loss = validate_loss(model, va_a, va_b, va_targets)
        log.write(epoch=epoch, step=step, split="train", loss=float(np.mean(losses)), lr=lr,
                  frozen_grad_max=frozen_max)
        log.write(epoch=epoch, step=step, split="val", exact_match=em, loss=val_loss)
        print(f"[adapt] epoch {epoch} loss {np.mean(losses):.4f} val loss {val_loss:.4f} "
              f"val exact {em:.3f} ({time.time() - t0:.0f}s)", file=sys.stderr, flush=True)
        # ranking scores captions by likelihood, so select on held-out loss
        if val_loss < best:
            best = val_loss
            model.save(out / "best.ckpt")
    model.save(out / "last.ckpt")
    if frozen_bytes(model) != frozen_before:
        raise TrainError("frozen parameters changed during the adapt phase")
    (out / "frozen.sha").write_text(_digest(frozen_before) + "\n")
    return out / "best.ckpt"


def _digest(blob: bytes) -> str:
    import hashlib
    return hashlib.sha256(blob).hexdigest()


def train(cfg: TrainConfig, data_root: str | Path, out_dir: str | Path, echo: bool = True) -> Path:
    if not (Path(data_root) / "vocab.txt").exists():
        raise TrainError(f"dataset not found or unreadable: {data_root}")
    if cfg.phase == "pretrain":
        return pretrain(cfg, data_root, out_dir, echo)
    if cfg.phase == "adapt":
        return adapt(cfg, data_root, out_dir, echo)
    raise TrainError(f"unknown phase {cfg.phase!r}")
