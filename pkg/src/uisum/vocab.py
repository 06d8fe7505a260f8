"""Tokenization, decoding vocabulary and pre-trained word vectors."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
RESERVED = (PAD, START, END, UNK)
PAD_ID, START_ID, END_ID, UNK_ID = range(4)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str | None) -> list[str]:
    """Lowercase, split on whitespace and split punctuation into its own tokens.

    >>> tokenize("Sign-In page.")
    ['sign', '-', 'in', 'page', '.']
    """
    if not text:
        return []
    return _TOKEN_RE.findall(text.lower())


def is_word(token: str) -> bool:
    return any(ch.isalnum() for ch in token)


class Vocabulary:
    """Bijective token/index map with PAD, START, END, UNK at 0..3."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(RESERVED) + [t for t in tokens]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def words(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.words), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocab(train_summaries: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens; ties go to the
    lexicographically smaller token."""
    if max_size < 1:
        raise ConfigError(f"max_size must be >= 1, got {max_size}")
    counts = Counter(t for tokens in train_summaries for t in tokens if t not in RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked[:max_size]])


@dataclass
class EmbeddingTable:
    index: dict[str, int]
    vectors: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def get(self, token: str) -> np.ndarray | None:
        i = self.index.get(token)
        return None if i is None else self.vectors[i]

    @classmethod
    def from_dict(cls, mapping: dict[str, Sequence[float]]) -> "EmbeddingTable":
        tokens = list(mapping)
        vecs = np.asarray([mapping[t] for t in tokens], dtype=np.float32)
        if vecs.ndim != 2:
            vecs = vecs.reshape(len(tokens), -1)
        return cls({t: i for i, t in enumerate(tokens)}, vecs)


def load_word_vectors(path, dimension: int | None = None, keep: set[str] | None = None) -> EmbeddingTable:
    """Read whitespace-separated ``token v1 ... vd`` lines (GloVe text format).

    The first line fixes the dimension unless ``dimension`` is given. Duplicate
    tokens keep their first occurrence. ``keep`` restricts loading to a token
    subset, which makes the 400K-entry file cheap to read for a small corpus.
    """
    index: dict[str, int] = {}
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if len(parts) <= 1:
                if not line.strip():
                    continue
                raise FormatError("entry has no vector values", line=lineno)
            token, values = parts[0], parts[1:]
            if dimension is None:
                dimension = len(values)
            elif len(values) != dimension:
                raise FormatError(f"expected {dimension} values, found {len(values)}", line=lineno)
            if token in index or (keep is not None and token not in keep):
                continue
            try:
                rows.append(np.asarray(values, dtype=np.float32))
            except ValueError:
                raise FormatError("non-numeric vector value", line=lineno) from None
            index[token] = len(rows) - 1
    vectors = np.stack(rows) if rows else np.zeros((0, dimension or 0), dtype=np.float32)
    return EmbeddingTable(index, vectors)


def embed_text_pooled(tokens: Iterable[str], table: EmbeddingTable) -> np.ndarray:
    """Sum of the vectors of in-table tokens (zero vector when none)."""
    rows = sorted(table.index[t] for t in tokens if t in table.index)
    out = np.zeros(table.dimension, dtype=np.float32)
    # summing in row order makes the result independent of token order
    for r in rows:
        out += table.vectors[r]
    return out
