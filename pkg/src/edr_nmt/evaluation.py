"""Corpus BLEU, paired bootstrap significance, and redundant/unknown word counts."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import UsageError
from .data import RESERVED

MAX_ORDER = 4
UNK_TOKEN = RESERVED[3]


def _tokens(sent) -> list[str]:
    return sent.split() if isinstance(sent, str) else list(sent)


def _check_aligned(*corpora) -> None:
    n = len(corpora[0])
    for c in corpora[1:]:
        if len(c) != n:
            raise UsageError(f"corpora are not aligned: {n} vs {len(c)} sentences")


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp, ref) -> np.ndarray:
    """[matches_1..4, totals_1..4, hyp_len, ref_len] with clipped n-gram matches."""
    h, r = _tokens(hyp), _tokens(ref)
    row = np.zeros(2 * MAX_ORDER + 2, dtype=np.int64)
    for n in range(1, MAX_ORDER + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        row[n - 1] = sum(min(c, rc[g]) for g, c in hc.items())
        row[MAX_ORDER + n - 1] = max(len(h) - n + 1, 0)
    row[-2], row[-1] = len(h), len(r)
    return row


def corpus_stats(hypotheses, references) -> np.ndarray:
    _check_aligned(hypotheses, references)
    if not hypotheses:
        return np.zeros((0, 2 * MAX_ORDER + 2), dtype=np.int64)
    return np.stack([sentence_stats(h, r) for h, r in zip(hypotheses, references)])


def _bleu_from_totals(tot: np.ndarray) -> np.ndarray:
    """Vectorised BLEU over rows of summed statistics."""
    tot = np.atleast_2d(tot).astype(float)
    matches, totals = tot[:, :MAX_ORDER], tot[:, MAX_ORDER : 2 * MAX_ORDER]
    c, r = tot[:, -2], tot[:, -1]
    ok = (matches > 0).all(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.where(matches > 0, np.log(np.where(matches > 0, matches, 1) / np.where(totals > 0, totals, 1)), 0.0)
        bp = np.where(c > r, 1.0, np.exp(1.0 - r / np.where(c > 0, c, 1)))
    return np.where(ok & (c > 0), bp * np.exp(log_p.mean(axis=1)), 0.0)


@dataclass(frozen=True)
class BleuResult:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float


def bleu_corpus(hypotheses, references) -> BleuResult:
    """Single-reference corpus BLEU-4 without smoothing."""
    tot = corpus_stats(hypotheses, references).sum(axis=0)
    matches, totals = tot[:MAX_ORDER], tot[MAX_ORDER : 2 * MAX_ORDER]
    precisions = tuple(float(m / t) if t > 0 else 0.0 for m, t in zip(matches, totals))
    c, r = tot[-2], tot[-1]
    if c == 0:
        bp = 0.0
    else:
        bp = 1.0 if c > r else float(np.exp(1.0 - r / c))
    return BleuResult(float(_bleu_from_totals(tot)[0]), precisions, bp)


def bootstrap_significance(hyp_a, hyp_b, references, samples: int = 1000, seed: int = 0) -> float:
    """Paired bootstrap p-value for "A is better than B".

    Returns the fraction of resampled test sets on which BLEU(B) >= BLEU(A).
    """
    _check_aligned(hyp_a, hyp_b, references)
    if samples < 1:
        raise UsageError("samples must be >= 1")
    n = len(references)
    if n == 0:
        raise UsageError("cannot resample an empty corpus")
    sa, sb = corpus_stats(hyp_a, references), corpus_stats(hyp_b, references)
    idx = np.random.default_rng(seed).integers(0, n, size=(samples, n))
    bleu_a = _bleu_from_totals(sa[idx].sum(axis=1))
    bleu_b = _bleu_from_totals(sb[idx].sum(axis=1))
    return float(np.count_nonzero(bleu_b >= bleu_a) / samples)


@dataclass(frozen=True)
class WordStats:
    """(i) excess occurrences of reference words, (ii) repeated words absent
    from the reference, (iii) unknown-word tokens."""

    over: int = 0
    repeated_absent: int = 0
    unknown: int = 0

    def __add__(self, other: "WordStats") -> "WordStats":
        return WordStats(
            self.over + other.over,
            self.repeated_absent + other.repeated_absent,
            self.unknown + other.unknown,
        )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.over, self.repeated_absent, self.unknown)


def sentence_word_stats(hyp, ref, unk: str = UNK_TOKEN) -> WordStats:
    h, r = _tokens(hyp), _tokens(ref)
    ch = Counter(t for t in h if t != unk)
    cr = Counter(t for t in r if t != unk)
    over = sum(max(0, c - cr[w]) for w, c in ch.items() if cr[w] > 0)
    repeated = sum(c for w, c in ch.items() if cr[w] == 0 and c > 1)
    return WordStats(over, repeated, sum(1 for t in h if t == unk))


def word_stats(hypotheses, references, unk: str = UNK_TOKEN) -> WordStats:
    _check_aligned(hypotheses, references)
    total = WordStats()
    for h, r in zip(hypotheses, references):
        total = total + sentence_word_stats(h, r, unk)
    return total


# ------------------------------------------------------------------ report

REPORT_COLUMNS = ("model", "BLEU", "p-value", "(i)", "(ii)", "(iii)", "hours")


@dataclass
class EvalReport:
    model: str
    bleu: BleuResult
    words: WordStats
    p_value: float | None = None
    hours: float | None = None

    def row(self) -> list[str]:
        return [
            self.model,
            f"{self.bleu.bleu:.4f}",
            "-" if self.p_value is None else f"{self.p_value:.3f}",
            *(str(x) for x in self.words.as_tuple()),
            "-" if self.hours is None else f"{self.hours:.4f}",
        ]


def evaluate(model: str, hypotheses, references, unk: str = UNK_TOKEN) -> EvalReport:
    return EvalReport(model, bleu_corpus(hypotheses, references), word_stats(hypotheses, references, unk))


def format_report(reports: Sequence[EvalReport]) -> str:
    lines = ["\t".join(REPORT_COLUMNS)]
    lines += ["\t".join(r.row()) for r in reports]
    return "\n".join(lines) + "\n"
