import numpy as np
import pytest

from edr_nmt import data as D
from edr_nmt import model as M
from edr_nmt.autodiff import UsageError
from edr_nmt.decoding import (
    Translation,
    export_attention,
    greedy_decode,
    greedy_decode_batch,
    length_cap,
    parse_attention,
)


@pytest.fixture
def theta():
    return M.init_params(M.ModelConfig(20, 20, 8, 8, seed=7))[0]


def random_sources(n, seed=0, vocab=20, max_len=7):
    rng = np.random.default_rng(seed)
    return [tuple(int(x) for x in rng.integers(4, vocab, size=rng.integers(1, max_len + 1))) for _ in range(n)]


def test_end_token_first_gives_empty(theta):
    theta["theta.out.b"][D.EOS] = 100.0
    t = greedy_decode(theta, (4, 5, 6))
    assert t.ids == [] and t.attention.shape == (0, 3)


def test_length_cap(theta):
    theta["theta.out.b"][D.EOS] = -100.0
    theta["theta.out.b"][9] = 100.0
    assert length_cap(5) == 15
    t = greedy_decode(theta, (4, 5, 6, 7, 8))
    assert len(t.ids) == 15 and set(t.ids) == {9}


def test_specials_never_emitted(theta):
    theta["theta.out.b"][D.PAD] = 50.0
    theta["theta.out.b"][D.BOS] = 50.0
    for t in greedy_decode_batch(theta, random_sources(10)):
        assert all(i > D.EOS for i in t.ids)


def test_deterministic_and_batch_independent(theta):
    sources = random_sources(12, seed=1)
    a = greedy_decode_batch(theta, sources, batch_size=5)
    b = greedy_decode_batch(theta, sources, batch_size=64)
    for x, y in zip(a, b):
        assert x.ids == y.ids
        np.testing.assert_allclose(x.attention, y.attention, atol=1e-12)
    single = greedy_decode(theta, sources[3])
    assert single.ids == a[3].ids


def test_consistent_with_teacher_forcing(theta):
    for src in random_sources(5, seed=2):
        t = greedy_decode(theta, src)
        if not t.ids:
            continue
        batch = D.collate([D.SentencePair(src, tuple(t.ids))])
        _, trace = M.forward_pass(M.constants(theta), batch)
        dist = trace.dist.data[0]
        for i, tok in enumerate(t.ids):
            assert tok == int(np.argmax(dist[i, D.EOS:])) + D.EOS
            assert t.log_probs[i] == pytest.approx(np.log(dist[i, tok]), abs=1e-12)
        np.testing.assert_allclose(t.attention, trace.alpha[0, : len(t.ids)], atol=1e-12)


def test_attention_rows(theta):
    for t in greedy_decode_batch(theta, random_sources(8, seed=3)):
        assert t.attention.shape[0] == len(t.ids)
        if len(t.ids):
            np.testing.assert_allclose(t.attention.sum(axis=1), 1.0, atol=1e-9)


class TestAttentionExport:
    def test_single_cell(self):
        t = Translation([5], np.array([[1.0]]), [0.0])
        assert export_attention(t, ["a"], ["b"]) == "\ta\nb\t1.000000\n"

    def test_round_trip(self, theta):
        src = random_sources(1, seed=4, max_len=6)[0]
        t = greedy_decode(theta, src)
        text = export_attention(t, [f"s{i}" for i in src], [f"t{i}" for i in t.ids])
        cols, rows, matrix = parse_attention(text)
        assert cols == [f"s{i}" for i in src] and rows == [f"t{i}" for i in t.ids]
        assert np.abs(matrix - t.attention).max() <= 5e-7
        if rows:
            assert np.all(np.abs(matrix.sum(axis=1) - 1.0) <= 1e-4)

    def test_dimension_mismatch(self):
        t = Translation([5], np.array([[0.5, 0.5]]), [0.0])
        with pytest.raises(UsageError):
            export_attention(t, ["a"], ["b"])
