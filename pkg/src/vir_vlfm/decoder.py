"""Tiny causal transformer decoder conditioned on an instruction and a visual prefix.

Input layout per sample::

    [instruction (I) | visual prefix (P) | BOS, w_1 .. w_{m-1}]

Logits at the last ``m`` positions predict ``w_1 .. w_m`` (``w_m`` is EOS).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import LayerNorm, Linear, Module, Parameter, Tensor, no_grad, ops
from .autodiff.nn import Attention
from .vocab import Vocabulary

_MASKED = -1e9


@dataclass
class DecoderConfig:
    width: int = 64
    depth: int = 2
    heads: int = 4
    max_len: int = 32
    instruction_len: int = 4
    prefix_len: int = 16
    beams: int = 5
    repetition_penalty: float = 1.5
    temperature: float = 1.0

    def __post_init__(self):
        if self.beams < 1:
            raise ValueError("beam count must be >= 1")
        if self.repetition_penalty < 1.0:
            raise ValueError("repetition penalty must be >= 1")


class DecoderBlock(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = Attention(d, d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, 4 * d, rng)
        self.fc2 = Linear(4 * d, d, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask=mask)
        return x + self.fc2(ops.gelu(self.fc1(self.ln2(x))))


class Decoder(Module):
    INSTRUCTIONS = ("caption", "change")

    def __init__(self, cfg: DecoderConfig, vocab_size: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        d = cfg.width
        self.vocab_size = vocab_size
        self.tok = Parameter(rng.normal(0, 0.02, (vocab_size, d)))
        total = cfg.instruction_len + cfg.prefix_len + cfg.max_len
        self.pos = Parameter(rng.normal(0, 0.02, (total, d)))
        self.instr_caption = Parameter(rng.normal(0, 0.02, (cfg.instruction_len, d)))
        self.instr_change = Parameter(rng.normal(0, 0.02, (cfg.instruction_len, d)))
        for i in range(cfg.depth):
            setattr(self, f"block{i}", DecoderBlock(d, cfg.heads, rng))
        self.ln_f = LayerNorm(d)
        self.head = Linear(d, vocab_size, rng)
        self._masks: dict[int, np.ndarray] = {}

    def _mask(self, n: int) -> np.ndarray:
        if n not in self._masks:
            self._masks[n] = np.triu(np.full((n, n), _MASKED), k=1)
        return self._masks[n]

    def logits(self, prefix: Tensor, tokens: np.ndarray, instruction: str = "change") -> Tensor:
        """Next-token logits ``[B, T, V]`` for input ``tokens[B, T]`` (starting with BOS)."""
        cfg = self.cfg
        b, t = tokens.shape
        if prefix.shape[1:] != (cfg.prefix_len, cfg.width):
            raise ValueError(f"prefix shape {prefix.shape} != [B, {cfg.prefix_len}, {cfg.width}]")
        if t > cfg.max_len:
            raise ValueError(f"sequence of {t} tokens exceeds max length {cfg.max_len}")
        instr = self.instr_change if instruction == "change" else self.instr_caption
        x = ops.concat([ops.expand(instr, b), prefix, ops.take_rows(self.tok, tokens)], axis=1)
        n = x.shape[1]
        x = ops.add(x, self.pos[:n])
        mask = self._mask(n)
        for i in range(cfg.depth):
            x = getattr(self, f"block{i}")(x, mask)
        x = self.ln_f(x[:, n - t:, :])
        return self.head(x)

    # -- training ------------------------------------------------------------

    def _teacher_batch(self, targets: Sequence[Sequence[int]], vocab_eos: int, vocab_bos: int,
                       vocab_pad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = max(len(t) for t in targets)
        inputs = np.full((len(targets), m), vocab_pad, dtype=np.int64)
        labels = np.full((len(targets), m), vocab_pad, dtype=np.int64)
        weights = np.zeros((len(targets), m))
        for i, t in enumerate(targets):
            if not t or t[-1] != vocab_eos:
                raise ValueError(f"target {list(t)} does not end with EOS")
            if len(t) > self.cfg.max_len:
                raise ValueError(f"target of length {len(t)} exceeds max length {self.cfg.max_len}")
            inputs[i, 0] = vocab_bos
            inputs[i, 1:len(t)] = t[:-1]
            labels[i, :len(t)] = t
            weights[i, :len(t)] = 1.0
        return inputs, labels, weights

    def caption_loss(self, prefix: Tensor, targets: Sequence[Sequence[int]],
                     instruction: str = "change") -> Tensor:
        """Mean token cross-entropy over caption positions (prefix excluded)."""
        inputs, labels, weights = self._teacher_batch(targets, Vocabulary.eos, Vocabulary.bos,
                                                      Vocabulary.pad)
        logits = self.logits(prefix, inputs, instruction)
        onehot = np.eye(self.vocab_size)[labels]
        return ops.softmax_cross_entropy(logits, onehot, weights)

    # -- inference -------------------------------------------------------------

    def score(self, prefix: Tensor, candidates: Sequence[Sequence[int]],
              instruction: str = "change") -> np.ndarray:
        """Total teacher-forced log-likelihood of each candidate (EOS included)."""
        if len(candidates) == 0:
            raise ValueError("no candidates to score")
        pre = prefix.data if prefix.ndim == 3 else prefix.data[None]
        inputs, labels, weights = self._teacher_batch(candidates, Vocabulary.eos, Vocabulary.bos,
                                                      Vocabulary.pad)
        with no_grad():
            pre_b = Tensor(np.broadcast_to(pre[:1], (len(candidates),) + pre.shape[1:]))
            logp = ops.log_softmax_values(self.logits(pre_b, inputs, instruction).data)
        picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
        return (picked * weights).sum(axis=1)

    def rank(self, prefix: Tensor, candidates: Sequence[Sequence[int]],
             instruction: str = "change") -> list[tuple[list[int], float]]:
        """Candidates sorted by descending log-likelihood; ties keep input order."""
        scores = self.score(prefix, candidates, instruction)
        order = sorted(range(len(candidates)), key=lambda i: -scores[i])
        return [(list(candidates[i]), float(scores[i])) for i in order]

    def greedy(self, prefix: Tensor, instruction: str = "change", max_len: int | None = None) -> list[list[int]]:
        """Plain argmax decoding for a batch of prefixes ``[B, P, d]`` (no penalty)."""
        max_len = self.cfg.max_len if max_len is None else min(max_len, self.cfg.max_len)
        b = prefix.shape[0]
        seqs = np.full((b, 1), Vocabulary.bos, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        with no_grad():
            for _ in range(max_len):
                nxt = self.logits(prefix, seqs, instruction).data[:, -1, :].argmax(axis=-1)
                nxt = np.where(done, Vocabulary.pad, nxt)
                seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
                done |= nxt == Vocabulary.eos
                if done.all():
                    break
        out = []
        for row in seqs[:, 1:]:
            toks = []
            for t in row:
                toks.append(int(t))
                if t == Vocabulary.eos:
                    break
            out.append([t for t in toks if t != Vocabulary.pad])
        return out

    def _step_logprobs(self, prefix: np.ndarray, seqs: list[list[int]], instruction: str,
                       penalty: float, temperature: float) -> np.ndarray:
        tokens = np.array([[Vocabulary.bos] + s for s in seqs], dtype=np.int64)
        pre = Tensor(np.broadcast_to(prefix, (len(seqs),) + prefix.shape))
        logits = self.logits(pre, tokens, instruction).data[:, -1, :].copy()
        if penalty != 1.0:
            for row, s in zip(logits, seqs):
                for tok in set(s):
                    row[tok] = row[tok] / penalty if row[tok] > 0 else row[tok] * penalty
        return ops.log_softmax_values(logits / temperature)

    def generate(self, prefix: Tensor, beams: int | None = None, penalty: float | None = None,
                 temperature: float | None = None, instruction: str = "change",
                 max_len: int | None = None) -> tuple[list[int], float]:
        """Beam search over one sample's prefix ``[P, d]`` (or ``[1, P, d]``).

        Returns the best caption (ending in EOS when one finished) and its score,
        the sum of penalized log-probabilities.
        """
        cfg = self.cfg
        beams = cfg.beams if beams is None else beams
        penalty = cfg.repetition_penalty if penalty is None else penalty
        temperature = cfg.temperature if temperature is None else temperature
        max_len = cfg.max_len if max_len is None else min(max_len, cfg.max_len)
        pre = prefix.data if prefix.ndim == 2 else prefix.data[0]
        live: list[tuple[list[int], float]] = [([], 0.0)]
        finished: list[tuple[list[int], float]] = []
        with no_grad():
            for _ in range(max_len):
                logp = self._step_logprobs(pre, [s for s, _ in live], instruction, penalty, temperature)
                cand = []
                for (seq, sc), row in zip(live, logp):
                    top = np.argsort(-row, kind="stable")[:beams]
                    cand.extend((sc + float(row[t]), seq + [int(t)]) for t in top)
                cand.sort(key=lambda c: -c[0])
                live = []
                for sc, seq in cand[:beams]:
                    if seq[-1] == Vocabulary.eos:
                        finished.append((seq, sc))
                    else:
                        live.append((seq, sc))
                best_done = max((sc for _, sc in finished), default=-np.inf)
                if not live or max(sc for _, sc in live) <= best_done:
                    break
        pool = finished if finished else live
        seq, sc = max(pool, key=lambda c: c[1])
        return seq, sc
