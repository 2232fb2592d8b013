"""Closed caption vocabulary: one token per line, line number is the id."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

BOS, EOS, PAD = "<bos>", "<eos>", "<pad>"


class Vocabulary:
    def __init__(self, words: Iterable[str]):
        tokens = [BOS, EOS, PAD]
        for w in words:
            if w not in tokens:
                tokens.append(w)
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    bos = 0
    eos = 1
    pad = 2

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def encode(self, caption: str) -> list[int]:
        """Whitespace-tokenize and append EOS; unknown words raise KeyError."""
        ids = []
        for w in caption.split():
            if w not in self.index:
                raise KeyError(f"out-of-vocabulary token {w!r} in {caption!r}")
            ids.append(self.index[w])
        return ids + [self.eos]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            if i == self.eos:
                break
            if i in (self.bos, self.pad):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:3] != [BOS, EOS, PAD]:
            raise ValueError(f"{path}: vocabulary must start with {BOS}, {EOS}, {PAD}")
        return cls(lines[3:])
