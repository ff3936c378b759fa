"""Greedy decoding and attention-matrix export."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model as M
from .autodiff import UsageError
from .data import BOS, EOS, collate, SentencePair

DEFAULT_MAX_LEN_FACTOR = 2


@dataclass
class Translation:
    ids: list[int]
    attention: np.ndarray  # (len(ids), |x|)
    log_probs: list[float] = field(default_factory=list)


def length_cap(src_len: int, factor: float = DEFAULT_MAX_LEN_FACTOR) -> int:
    return int(factor * src_len) + 5


def greedy_decode_batch(
    theta: dict[str, np.ndarray],
    sources: Sequence[Sequence[int]],
    max_len_factor: float = DEFAULT_MAX_LEN_FACTOR,
    batch_size: int = 64,
) -> list[Translation]:
    """Greedy (argmax) decoding of many sources, batched in input order.

    ``<pad>`` and ``<s>`` are never emitted; argmax ties go to the lowest id.
    A row stops at ``</s>`` or after ``length_cap`` tokens.
    """
    p = M.constants(theta)
    W_a, U_a, v_a = p[M.THETA + "att.W"], p[M.THETA + "att.U"], p[M.THETA + "att.v"]
    results: list[Translation] = []
    for start in range(0, len(sources), batch_size):
        chunk = [tuple(s) for s in sources[start : start + batch_size]]
        if any(len(s) == 0 for s in chunk):
            raise UsageError("cannot decode an empty source sentence")
        batch = collate([SentencePair(s, (EOS,)) for s in chunk])
        B = len(chunk)
        enc = M.encode(p, batch.src, batch.src_mask)
        s = M.init_decoder_state(p, enc)
        projected = enc.H @ U_a
        caps = np.array([length_cap(len(x), max_len_factor) for x in chunk])
        y = np.full(B, BOS, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        out = [Translation([], np.zeros((0, len(x))), []) for x in chunk]
        rows: list[list[np.ndarray]] = [[] for _ in range(B)]
        step = 0
        while not done.all():
            alpha, c = M.attend(s, enc.H, enc.mask, W_a, U_a, v_a, projected)
            s, dist = M.decoder_step(p, s, y, c)
            probs = dist.data
            y = np.argmax(probs[:, EOS:], axis=1) + EOS
            for b in np.flatnonzero(~done):
                if y[b] == EOS:
                    done[b] = True
                    continue
                out[b].ids.append(int(y[b]))
                out[b].log_probs.append(float(np.log(probs[b, y[b]])))
                rows[b].append(alpha.data[b, : len(chunk[b])])
            step += 1
            done |= step >= caps
        for b in range(B):
            if rows[b]:
                out[b].attention = np.stack(rows[b])
        results.extend(out)
    return results


def greedy_decode(
    theta: dict[str, np.ndarray], source_ids: Sequence[int], max_len_factor: float = DEFAULT_MAX_LEN_FACTOR
) -> Translation:
    return greedy_decode_batch(theta, [source_ids], max_len_factor, batch_size=1)[0]


def export_attention(t: Translation, source_tokens: Sequence[str], output_tokens: Sequence[str]) -> str:
    """TSV: header row of source tokens, then one labelled row per output token."""
    att = np.asarray(t.attention)
    if att.shape != (len(output_tokens), len(source_tokens)):
        raise UsageError(
            f"attention is {att.shape} but got {len(output_tokens)} output "
            f"and {len(source_tokens)} source tokens"
        )
    lines = ["\t".join(["", *source_tokens])]
    for tok, row in zip(output_tokens, att):
        lines.append("\t".join([tok, *(f"{w:.6f}" for w in row)]))
    return "\n".join(lines) + "\n"


def parse_attention(text: str) -> tuple[list[str], list[str], np.ndarray]:
    lines = text.rstrip("\n").split("\n")
    source = lines[0].split("\t")[1:]
    output, rows = [], []
    for line in lines[1:]:
        cells = line.split("\t")
        output.append(cells[0])
        rows.append([float(x) for x in cells[1:]])
    return source, output, np.array(rows, dtype=float).reshape(len(output), len(source))
