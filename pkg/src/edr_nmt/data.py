"""Vocabularies, corpus I/O, length filtering and padded batching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


class DataError(ValueError):
    pass


class Vocabulary:
    """Bidirectional token/id map; ids 0-3 are the reserved specials."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise DataError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(tok, UNK) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def build_vocab(corpus: Iterable[Sequence[str]], cap: int) -> Vocabulary:
    """Keep the ``cap - 4`` most frequent tokens; ties go to the earlier first occurrence."""
    if cap < 4:
        raise DataError(f"vocabulary cap must be at least 4, got {cap}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        for tok in sentence:
            if tok in RESERVED:
                raise DataError(f"reserved token {tok!r} found in corpus")
            counts[tok] += 1
            first_seen.setdefault(tok, len(first_seen))
    if n_sentences == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary(list(RESERVED) + ranked[: cap - 4])


def encode(vocab: Vocabulary, tokens: Iterable[str]) -> list[int]:
    return vocab.encode(tokens)


# ------------------------------------------------------------------ corpora


@dataclass(frozen=True)
class SentencePair:
    source: tuple[int, ...]
    target: tuple[int, ...]


def read_lines(path: str | Path) -> list[list[str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.split() for line in fh.read().splitlines()]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def write_lines(path: str | Path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            fh.write(" ".join(sent) + "\n")


def read_parallel(src_path, tgt_path) -> list[tuple[list[str], list[str]]]:
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise DataError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    return list(zip(src, tgt))


def filter_by_length(pairs, max_len: int):
    """Drop pairs where either side is empty or longer than ``max_len`` tokens."""
    if max_len < 1:
        raise DataError("max_len must be >= 1")
    return [p for p in pairs if 0 < len(p[0]) <= max_len and 0 < len(p[1]) <= max_len]


def encode_pairs(pairs, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> list[SentencePair]:
    return [SentencePair(tuple(src_vocab.encode(s)), tuple(tgt_vocab.encode(t))) for s, t in pairs]


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    """Padded id matrices. ``tgt`` rows are ``<s> y </s>``; sources are bare."""

    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]

    def pairs(self) -> list[SentencePair]:
        out = []
        for i in range(len(self)):
            src = self.src[i][self.src_mask[i]]
            tgt = self.tgt[i][self.tgt_mask[i]][1:-1]
            out.append(SentencePair(tuple(int(x) for x in src), tuple(int(x) for x in tgt)))
        return out


def collate(pairs: Sequence[SentencePair]) -> Batch:
    if not pairs:
        raise DataError("cannot collate an empty batch")
    n = len(pairs)
    src_len = max(len(p.source) for p in pairs)
    tgt_len = max(len(p.target) for p in pairs) + 2
    src = np.zeros((n, src_len), dtype=np.int64)
    tgt = np.zeros((n, tgt_len), dtype=np.int64)
    for i, p in enumerate(pairs):
        if not p.source or not p.target:
            raise DataError("sentence pairs must be non-empty on both sides")
        src[i, : len(p.source)] = p.source
        tgt[i, : len(p.target) + 2] = (BOS, *p.target, EOS)
    src_mask = np.arange(src_len)[None, :] < np.array([len(p.source) for p in pairs])[:, None]
    tgt_mask = np.arange(tgt_len)[None, :] < np.array([len(p.target) + 2 for p in pairs])[:, None]
    return Batch(src, src_mask, tgt, tgt_mask)


def make_batches(pairs: Sequence[SentencePair], batch_size: int, seed: int) -> list[Batch]:
    """Shuffle by ``seed``, bucket by source length, cut into batches, shuffle batch order.

    Every pair appears in exactly one batch; the last batch may be short.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    # stable sort keeps the shuffled order within each length bucket
    order = sorted(order, key=lambda i: len(pairs[i].source))
    chunks = [order[k : k + batch_size] for k in range(0, len(order), batch_size)]
    batches = [collate([pairs[i] for i in chunk]) for chunk in chunks]
    if len(batches) > 1:
        # keep the short remainder last
        head = [batches[i] for i in rng.permutation(len(batches) - 1)]
        batches = head + batches[-1:]
    return batches


def sequential_batches(pairs: Sequence[SentencePair], batch_size: int) -> list[Batch]:
    """Batches in corpus order (for evaluation)."""
    return [collate(pairs[k : k + batch_size]) for k in range(0, len(pairs), batch_size)]


# ------------------------------------------------------- synthetic corpora


def symbol_alphabet(n: int) -> list[str]:
    return [f"w{i}" for i in range(n)]


def synthetic_corpus(
    task: str,
    size: int,
    seed: int | Sequence[int],
    n_symbols: int = 20,
    min_len: int = 3,
    max_len: int = 10,
) -> list[tuple[list[str], list[str]]]:
    """Copy or reversal pairs over ``n_symbols`` symbols with uniform lengths."""
    if task not in ("copy", "reverse"):
        raise DataError(f"unknown synthetic task {task!r}")
    if not 1 <= min_len <= max_len:
        raise DataError("need 1 <= min_len <= max_len")
    alphabet = symbol_alphabet(n_symbols)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(size):
        length = int(rng.integers(min_len, max_len + 1))
        src = [alphabet[k] for k in rng.integers(0, n_symbols, size=length)]
        out.append((src, list(src) if task == "copy" else src[::-1]))
    return out
