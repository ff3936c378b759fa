"""Adagrad training for the baseline, fine-tuning and joint regimes."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from . import model as M
from .data import (
    DataError,
    SentencePair,
    Vocabulary,
    build_vocab,
    encode_pairs,
    filter_by_length,
    make_batches,
    read_parallel,
    sequential_batches,
)

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8
REGIMES = ("baseline", "finetune", "joint", "all")


class ConfigError(ValueError):
    pass


@dataclass
class TrainingConfig:
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    src_vocab_file: str = ""
    tgt_vocab_file: str = ""
    out_dir: str = "run"
    pretrained: str = ""
    regime: str = "baseline"
    vocab_cap: int = 30000
    max_len: int = 40
    embed_dim: int = 64
    hidden_dim: int = 64
    lam: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 30
    finetune_epochs: int = 10
    batch_size: int = 64
    patience: int = 3
    clip_norm: float = 0.0
    selection: str = "loss"
    seed: int = 0
    bootstrap_samples: int = 1000
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.selection not in ("loss", "bleu"):
            raise ConfigError("selection must be 'loss' or 'bleu'")
        for name in ("vocab_cap", "max_len", "embed_dim", "hidden_dim", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.vocab_cap < 4:
            raise ConfigError("vocab_cap must be >= 4")

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p


# `lambda` is a keyword in Python
_KEY_ALIASES = {"lambda": "lam"}


def parse_config(text: str, base_dir: str | Path = ".") -> TrainingConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(TrainingConfig) if f.name != "base_dir"}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            values[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad {kind} value {value!r} for {key}") from None
    return TrainingConfig(**values, base_dir=str(base_dir))


def load_config(path: str | Path) -> TrainingConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, Path(path).parent)


def format_config(cfg: TrainingConfig) -> str:
    lines = []
    for f in fields(cfg):
        if f.name == "base_dir":
            continue
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    """Per-parameter running sums of squared gradients."""

    accumulators: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def adagrad_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> None:
    """In-place Adagrad: acc += g², p -= lr · g / (sqrt(acc) + 1e-8)."""
    for name, p in params.items():
        g = grads[name]
        acc = state.accumulators[name]
        if g.shape != p.shape or acc.shape != p.shape:
            raise ValueError(f"adagrad: shape mismatch for {name}: {p.shape}, {g.shape}, {acc.shape}")
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + ADAGRAD_EPS)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    if max_norm <= 0:
        return
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm


# ------------------------------------------------------------------- corpora


@dataclass
class Corpora:
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train: list[SentencePair]
    dev: list[SentencePair]
    test: list[SentencePair]
    dev_raw: list[tuple[list[str], list[str]]]
    test_raw: list[tuple[list[str], list[str]]]


def vocab_paths(cfg: TrainingConfig) -> tuple[Path, Path]:
    """Configured vocabulary files, defaulting to ``out_dir/{src,tgt}.vocab``."""
    out = cfg.path("out_dir")
    return (cfg.path("src_vocab_file") or out / "src.vocab", cfg.path("tgt_vocab_file") or out / "tgt.vocab")


def default_checkpoint(cfg: TrainingConfig) -> Path:
    regime = "finetune" if cfg.regime == "all" else cfg.regime
    return cfg.path("out_dir") / f"{regime}.best.ckpt"


def check_compatible(theta: dict[str, np.ndarray], src_vocab: int, tgt_vocab: int) -> None:
    try:
        mcfg = M.config_from_params(theta)
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"checkpoint lacks parameter {exc}") from None
    expected = M.param_shapes(M.ModelConfig(src_vocab, tgt_vocab, mcfg.embed_dim, mcfg.hidden_dim))[0]
    for name, shape in expected.items():
        if name not in theta or theta[name].shape != shape:
            got = theta[name].shape if name in theta else "missing"
            raise checkpoint.CheckpointError(f"{name}: expected shape {shape}, checkpoint has {got}")


def _read_optional(cfg: TrainingConfig, src_key: str, tgt_key: str):
    src, tgt = cfg.path(src_key), cfg.path(tgt_key)
    if src is None or tgt is None:
        return []
    return read_parallel(src, tgt)


def load_corpora(cfg: TrainingConfig) -> Corpora:
    """Read, length-filter and encode the corpora named in ``cfg``.

    Vocabulary files named in the config are loaded if present, otherwise
    built from the training corpus and written there.
    """
    if cfg.path("train_src") is None or cfg.path("train_tgt") is None:
        raise DataError("config must name train_src and train_tgt")
    train_raw = filter_by_length(read_parallel(cfg.path("train_src"), cfg.path("train_tgt")), cfg.max_len)
    if not train_raw:
        raise DataError("training corpus is empty after length filtering")
    vocabs = []
    for side, path in enumerate(vocab_paths(cfg)):
        if path.exists():
            vocabs.append(Vocabulary.load(path))
        else:
            v = build_vocab((pair[side] for pair in train_raw), cfg.vocab_cap)
            path.parent.mkdir(parents=True, exist_ok=True)
            v.save(path)
            vocabs.append(v)
    sv, tv = vocabs
    dev_raw = filter_by_length(_read_optional(cfg, "dev_src", "dev_tgt"), 10**9)
    test_raw = filter_by_length(_read_optional(cfg, "test_src", "test_tgt"), 10**9)
    return Corpora(
        sv, tv,
        encode_pairs(train_raw, sv, tv),
        encode_pairs(dev_raw, sv, tv),
        encode_pairs(test_raw, sv, tv),
        dev_raw, test_raw,
    )


# ------------------------------------------------------------------ metrics


def dev_losses(params, pairs, lam: float, reconstruct: bool, batch_size: int = 64) -> dict[str, float]:
    """Per-token forward/backward losses and teacher-forced accuracies."""
    tot = {"f": 0.0, "b": 0.0, "nt": 0, "ns": 0, "acc_f": 0, "acc_b": 0}
    p = M.constants(params)
    for batch in sequential_batches(pairs, batch_size):
        n = len(batch)
        loss_f, trace = M.forward_pass(p, batch)
        pred = trace.dist.data.argmax(axis=-1)
        mask = trace.mask
        tot["f"] += loss_f.item() * n
        tot["nt"] += int(mask.sum())
        tot["acc_f"] += int(((pred == batch.tgt[:, 1:]) & mask).sum())
        if reconstruct:
            loss_b, rtrace = M.reconstruct_pass(p, trace, batch)
            rpred = rtrace.dist.data.argmax(axis=-1)
            tot["b"] += loss_b.item() * n
            tot["ns"] += int(rtrace.mask.sum())
            tot["acc_b"] += int(((rpred == rtrace.targets) & rtrace.mask).sum())
    out = {"forward": tot["f"] / max(tot["nt"], 1), "forward_acc": tot["acc_f"] / max(tot["nt"], 1)}
    if reconstruct:
        out["backward"] = tot["b"] / max(tot["ns"], 1)
        out["backward_acc"] = tot["acc_b"] / max(tot["ns"], 1)
        out["objective"] = (tot["f"] + lam * tot["b"]) / max(tot["nt"], 1)
    else:
        out["objective"] = out["forward"]
    return out


def reconstruction_accuracy(params, pairs, batch_size: int = 64) -> float:
    return dev_losses(params, pairs, 1.0, True, batch_size)["backward_acc"]


def dev_bleu(theta, pairs: list[SentencePair], batch_size: int = 64) -> float:
    from .decoding import greedy_decode_batch
    from .evaluation import bleu_corpus

    outs = greedy_decode_batch(theta, [p.source for p in pairs], batch_size=batch_size)
    return bleu_corpus([t.ids for t in outs], [list(p.target) for p in pairs]).bleu


# ------------------------------------------------------------------ training


@dataclass
class EpochRecord:
    epoch: int
    forward_loss: float
    backward_loss: float | None
    dev_metric: float
    seconds: float
    checkpoint: str


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    HEADER = "epoch\tforward_loss\tbackward_loss\tdev_metric\tseconds\tcheckpoint"

    def append(self, rec: EpochRecord, path: Path | None = None) -> None:
        self.records.append(rec)
        if path is not None:
            new = not path.exists()
            with open(path, "a", encoding="utf-8") as fh:
                if new:
                    fh.write(self.HEADER + "\n")
                b = "-" if rec.backward_loss is None else f"{rec.backward_loss:.6f}"
                fh.write(
                    f"{rec.epoch}\t{rec.forward_loss:.6f}\t{b}\t{rec.dev_metric:.6f}\t"
                    f"{rec.seconds:.3f}\t{rec.checkpoint}\n"
                )

    @property
    def seconds(self) -> float:
        return sum(r.seconds for r in self.records)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: TrainingLog
    best_epoch: int
    best_checkpoint: Path | None


def fit(
    params: dict[str, np.ndarray],
    train: list[SentencePair],
    dev: list[SentencePair],
    cfg: TrainingConfig,
    *,
    reconstruct: bool,
    epochs: int,
    tag: str,
    out_dir: Path | None = None,
) -> TrainResult:
    """Minimise the (negated) objective with Adagrad and keep the best dev epoch.

    Selection uses the dev objective (or dev BLEU when ``selection = bleu``);
    training stops early after ``patience`` epochs without improvement.
    Without a dev set the last epoch is kept.
    """
    if not train:
        raise DataError("training corpus is empty")
    params = {k: v.copy() for k, v in params.items()}
    state = OptimizerState.zeros_like(params)
    tlog = TrainingLog()
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / f"{tag}.log.tsv"
        log_path.unlink(missing_ok=True)
    best = (np.inf, 0, params, None)
    stale = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(4)
        for batch in make_batches(train, cfg.batch_size, seed=cfg.seed * 100_003 + epoch):
            values, grads = M.loss_and_grads(params, batch, cfg.lam, reconstruct)
            clip_gradients(grads, cfg.clip_norm)
            adagrad_step(params, grads, state, cfg.learning_rate)
            n = len(batch)
            sums += (values.forward * n, (values.backward or 0.0) * n, values.n_tgt_tokens, values.n_src_tokens)
        train_f = sums[0] / sums[2]
        train_b = sums[1] / sums[3] if reconstruct else None
        if dev:
            if cfg.selection == "bleu":
                score = -dev_bleu(M.split_params(params)[0], dev, cfg.batch_size)
            else:
                score = dev_losses(params, dev, cfg.lam, reconstruct, cfg.batch_size)["objective"]
        else:
            score = train_f if not reconstruct else train_f + cfg.lam * train_b
        ckpt = None
        if out_dir is not None:
            ckpt = out_dir / f"{tag}.epoch{epoch:03d}.ckpt"
            checkpoint.save(ckpt, params)
        seconds = time.perf_counter() - t0
        tlog.append(EpochRecord(epoch, train_f, train_b, abs(score), seconds, ckpt.name if ckpt else "-"), log_path)
        log.info("%s epoch %d: train %.4f%s dev %.4f (%.1fs)", tag, epoch, train_f,
                 "" if train_b is None else f"/{train_b:.4f}", abs(score), seconds)
        if score < best[0] or not dev:
            best = (score, epoch, {k: v.copy() for k, v in params.items()}, ckpt)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _, best_epoch, best_params, best_ckpt = best
    best_path = None
    if out_dir is not None:
        best_path = out_dir / f"{tag}.best.ckpt"
        checkpoint.save(best_path, best_params)
    return TrainResult(best_params, tlog, best_epoch, best_path)


def _model_config(cfg: TrainingConfig, corp: Corpora) -> M.ModelConfig:
    return M.ModelConfig(len(corp.src_vocab), len(corp.tgt_vocab), cfg.embed_dim, cfg.hidden_dim, cfg.seed)


def train_baseline(corp: Corpora, cfg: TrainingConfig, out_dir: Path | None = None) -> TrainResult:
    theta, _ = M.init_params(_model_config(cfg, corp))
    return fit(theta, corp.train, corp.dev, cfg, reconstruct=False, epochs=cfg.epochs,
               tag="baseline", out_dir=out_dir)


def load_pretrained(theta_params: dict[str, np.ndarray], mcfg: M.ModelConfig) -> dict[str, np.ndarray]:
    """θ from a checkpoint plus a freshly initialised γ."""
    theta0, gamma = M.init_params(mcfg)
    for name, arr in theta0.items():
        if name not in theta_params:
            raise checkpoint.CheckpointError(f"pretrained checkpoint lacks {name}")
        if theta_params[name].shape != arr.shape:
            raise checkpoint.CheckpointError(
                f"{name}: checkpoint shape {theta_params[name].shape} does not match model {arr.shape}"
            )
    return {**{k: theta_params[k].copy() for k in theta0}, **gamma}


def train_finetune(
    theta_params: dict[str, np.ndarray], corp: Corpora, cfg: TrainingConfig, out_dir: Path | None = None
) -> TrainResult:
    params = load_pretrained(theta_params, _model_config(cfg, corp))
    return fit(params, corp.train, corp.dev, cfg, reconstruct=True, epochs=cfg.finetune_epochs,
               tag="finetune", out_dir=out_dir)


def train_joint(corp: Corpora, cfg: TrainingConfig, out_dir: Path | None = None) -> TrainResult:
    theta, gamma = M.init_params(_model_config(cfg, corp))
    return fit({**theta, **gamma}, corp.train, corp.dev, cfg, reconstruct=True, epochs=cfg.epochs,
               tag="joint", out_dir=out_dir)


# ------------------------------------------------------------------ regimes


@dataclass
class RegimeOutcome:
    name: str
    result: TrainResult
    seconds: float


def compare_regimes(corp: Corpora, cfg: TrainingConfig, out_dir: Path | None = None):
    """Train all three regimes and evaluate them on the test set (dev if none).

    Returns ``(outcomes, reports)``; the fine-tuned row carries the bootstrap
    p-value for "fine-tuned beats baseline". Fine-tuning time includes the
    pretraining it depends on.
    """
    from .decoding import greedy_decode_batch
    from .evaluation import bootstrap_significance, evaluate

    base = train_baseline(corp, cfg, out_dir)
    fine = train_finetune(base.params, corp, cfg, out_dir)
    joint = train_joint(corp, cfg, out_dir)
    outcomes = [
        RegimeOutcome("Baseline-NMT", base, base.log.seconds),
        RegimeOutcome("+Reconstructor", fine, base.log.seconds + fine.log.seconds),
        RegimeOutcome("+Reconstructor (Jointly-Training)", joint, joint.log.seconds),
    ]
    pairs = corp.test or corp.dev
    raw = corp.test_raw if corp.test else corp.dev_raw
    if not pairs:
        raise DataError("regime comparison needs a dev or test set")
    refs = [tgt for _, tgt in raw]
    hyps = {}
    reports = []
    for oc in outcomes:
        theta = M.split_params(oc.result.params)[0]
        outs = greedy_decode_batch(theta, [p.source for p in pairs], batch_size=cfg.batch_size)
        hyps[oc.name] = [corp.tgt_vocab.decode(t.ids) for t in outs]
        rep = evaluate(oc.name, hyps[oc.name], refs)
        rep.hours = oc.seconds / 3600.0
        reports.append(rep)
    reports[1].p_value = bootstrap_significance(
        hyps["+Reconstructor"], hyps["Baseline-NMT"], refs, cfg.bootstrap_samples, cfg.seed
    )
    return outcomes, reports


def with_overrides(cfg: TrainingConfig, **kw) -> TrainingConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
