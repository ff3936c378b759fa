import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edr_nmt import checkpoint
from edr_nmt import data as D
from edr_nmt import model as M
from edr_nmt import training as T


class TestJointLoss:
    def test_examples(self):
        assert M.loss_joint(2.0, 3.0, 0.5) == 3.5
        assert M.loss_joint(2.0, 3.0, 0.0) == 2.0

    @given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 5), st.floats(0, 5))
    def test_linear_in_lambda(self, lf, lb, a, b):
        lhs = M.loss_joint(lf, lb, a + b) - M.loss_joint(lf, lb, a)
        assert lhs == pytest.approx(b * lb, abs=1e-9)


class TestAdagrad:
    def test_two_steps(self):
        p = {"w": np.array([1.0])}
        state = T.OptimizerState.zeros_like(p)
        T.adagrad_step(p, {"w": np.array([2.0])}, state, 0.1)
        first = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8)
        assert p["w"][0] == pytest.approx(first, abs=1e-15)
        T.adagrad_step(p, {"w": np.array([2.0])}, state, 0.1)
        assert p["w"][0] == pytest.approx(first - 0.1 * 2.0 / (math.sqrt(8.0) + 1e-8), abs=1e-15)
        assert state.accumulators["w"][0] == 8.0

    def test_zero_gradient_is_identity(self):
        p = {"w": np.array([0.3, -1.2])}
        state = T.OptimizerState.zeros_like(p)
        T.adagrad_step(p, {"w": np.zeros(2)}, state, 0.5)
        assert p["w"].tolist() == [0.3, -1.2]

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.lists(st.floats(-10, 10), min_size=3, max_size=3), min_size=1, max_size=6))
    def test_accumulators_nondecreasing(self, steps):
        p = {"w": np.zeros(3)}
        state = T.OptimizerState.zeros_like(p)
        prev = state.accumulators["w"].copy()
        for g in steps:
            T.adagrad_step(p, {"w": np.array(g)}, state, 0.01)
            assert np.all(state.accumulators["w"] >= prev)
            prev = state.accumulators["w"].copy()

    def test_shape_mismatch(self):
        p = {"w": np.zeros(3)}
        with pytest.raises(ValueError):
            T.adagrad_step(p, {"w": np.zeros(2)}, T.OptimizerState.zeros_like(p), 0.1)


class TestConfig:
    def test_parse(self, tmp_path):
        cfg = T.parse_config("regime = joint\nlambda = 0.5  # weight\n\nepochs=3\n", tmp_path)
        assert (cfg.regime, cfg.lam, cfg.epochs, cfg.hidden_dim) == ("joint", 0.5, 3, 64)

    def test_round_trip(self):
        cfg = T.TrainingConfig(train_src="a", lam=0.25, regime="finetune")
        assert T.parse_config(T.format_config(cfg)) == cfg

    @pytest.mark.parametrize("text", ["bogus = 1", "epochs = many", "regime = other",
                                      "lambda = -1", "learning_rate = 0", "no equals sign"])
    def test_rejected(self, text):
        with pytest.raises(T.ConfigError):
            T.parse_config(text)

    def test_relative_paths(self, tmp_path):
        (tmp_path / "c.txt").write_text("train_src = data/a.src\n")
        cfg = T.load_config(tmp_path / "c.txt")
        assert cfg.path("train_src") == tmp_path / "data" / "a.src"


def tiny_corpus(n=10, seed=3):
    raw = D.synthetic_corpus("copy", n, seed=seed, n_symbols=8, max_len=5)
    v = D.build_vocab((s for s, _ in raw), 20)
    return v, D.encode_pairs(raw, v, v)


def small_corpora(n=40):
    v, pairs = tiny_corpus(n)
    return T.Corpora(v, v, pairs, pairs[:8], pairs[:8], [], [])


def test_overfits_ten_pairs():
    v, pairs = tiny_corpus()
    cfg = T.TrainingConfig(embed_dim=16, hidden_dim=16, batch_size=10, learning_rate=0.05)
    theta, _ = M.init_params(M.ModelConfig(len(v), len(v), 16, 16))
    result = T.fit(theta, pairs, [], cfg, reconstruct=False, epochs=200, tag="overfit")
    assert result.log.records[-1].forward_loss < 0.1


def test_same_seed_same_checkpoint(tmp_path):
    corp = small_corpora()
    cfg = T.TrainingConfig(embed_dim=8, hidden_dim=8, batch_size=16, epochs=2, seed=5)
    T.train_joint(corp, cfg, tmp_path / "a")
    T.train_joint(corp, cfg, tmp_path / "b")
    for name in ("joint.epoch001.ckpt", "joint.epoch002.ckpt", "joint.best.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    log = (tmp_path / "a" / "joint.log.tsv").read_text().splitlines()
    assert log[0] == T.TrainingLog.HEADER and len(log) == 3


def test_finetune_starts_from_pretrained_loss(tmp_path):
    corp = small_corpora()
    cfg = T.TrainingConfig(embed_dim=8, hidden_dim=8, batch_size=16, epochs=2)
    base = T.train_baseline(corp, cfg, tmp_path)
    theta = M.split_params(checkpoint.load(base.best_checkpoint))[0]
    params = T.load_pretrained(theta, T._model_config(cfg, corp))
    batch = D.collate(corp.dev)
    before = M.evaluate_loss(base.params, batch, reconstruct=False).forward
    after = M.evaluate_loss(params, batch, reconstruct=True).forward
    assert after == before


def test_zero_lambda_matches_baseline_continuation():
    corp = small_corpora()
    cfg = T.TrainingConfig(embed_dim=8, hidden_dim=8, batch_size=16, lam=0.0)
    theta, gamma = M.init_params(T._model_config(cfg, corp))
    plain = T.fit(theta, corp.train, [], cfg, reconstruct=False, epochs=2, tag="a")
    joint = T.fit({**theta, **gamma}, corp.train, [], cfg, reconstruct=True, epochs=2, tag="b")
    for k in theta:
        assert plain.params[k].tobytes() == joint.params[k].tobytes()


def test_early_stopping_keeps_best(monkeypatch):
    corp = small_corpora()
    cfg = T.TrainingConfig(embed_dim=8, hidden_dim=8, batch_size=16, patience=2)
    scores = iter([3.0, 1.0, 2.0, 2.5, 0.1])
    monkeypatch.setattr(T, "dev_losses", lambda *a, **k: {"objective": next(scores)})
    theta, _ = M.init_params(T._model_config(cfg, corp))
    result = T.fit(theta, corp.train, corp.dev, cfg, reconstruct=False, epochs=5, tag="x")
    assert result.best_epoch == 2
    assert len(result.log.records) == 4


def test_load_pretrained_rejects_shape_mismatch():
    theta, _ = M.init_params(M.ModelConfig(20, 20, 8, 8))
    with pytest.raises(checkpoint.CheckpointError):
        T.load_pretrained(theta, M.ModelConfig(21, 20, 8, 8))


def test_input_params_not_mutated():
    corp = small_corpora()
    cfg = T.TrainingConfig(embed_dim=8, hidden_dim=8, batch_size=16)
    theta, _ = M.init_params(T._model_config(cfg, corp))
    snapshot = {k: v.copy() for k, v in theta.items()}
    T.fit(theta, corp.train, [], cfg, reconstruct=False, epochs=1, tag="x")
    assert all(np.array_equal(theta[k], snapshot[k]) for k in theta)
