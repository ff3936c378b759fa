"""Encoder, attention decoder and reconstructor as functions of named parameters.

Parameters are plain ``dict[str, np.ndarray]`` objects. Encoder-decoder
weights carry the ``theta.`` prefix and reconstructor weights the ``gamma.``
prefix. To differentiate, bind them on a :class:`~edr_nmt.autodiff.Tape`;
for inference, wrap them with :func:`constants`.

All recurrent cells are GRUs with the input projection ``x @ W + b`` and
the recurrent projection ``h @ U``. Readouts are ``softmax([state; prev
embedding; context] @ W + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, UsageError
from .data import BOS, EOS, Batch

THETA = "theta."
GAMMA = "gamma."


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    embed_dim: int
    hidden_dim: int
    seed: int = 0

    def __post_init__(self):
        for field in ("src_vocab", "tgt_vocab", "embed_dim", "hidden_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")


def param_shapes(cfg: ModelConfig) -> tuple[dict[str, tuple], dict[str, tuple]]:
    E, H = cfg.embed_dim, cfg.hidden_dim
    Vs, Vt = cfg.src_vocab, cfg.tgt_vocab
    theta = {
        "src_embed": (Vs, E),
        "tgt_embed": (Vt, E),
        "enc_fwd.W": (E, 3 * H),
        "enc_fwd.U": (H, 3 * H),
        "enc_fwd.b": (3 * H,),
        "enc_bwd.W": (E, 3 * H),
        "enc_bwd.U": (H, 3 * H),
        "enc_bwd.b": (3 * H,),
        "dec_init.W": (H, H),
        "att.W": (H, H),
        "att.U": (2 * H, H),
        "att.v": (H, 1),
        "dec.W": (E + 2 * H, 3 * H),
        "dec.U": (H, 3 * H),
        "dec.b": (3 * H,),
        "out.W": (H + E + 2 * H, Vt),
        "out.b": (Vt,),
    }
    gamma = {
        "rec_init.W": (H, H),
        "inv_att.W": (H, H),
        "inv_att.U": (H, H),
        "inv_att.v": (H, 1),
        "rec.W": (E + H, 3 * H),
        "rec.U": (H, 3 * H),
        "rec.b": (3 * H,),
        "rec_out.W": (H + E + H, Vs),
        "rec_out.b": (Vs,),
    }
    return ({THETA + k: v for k, v in theta.items()}, {GAMMA + k: v for k, v in gamma.items()})


def _init(shapes: dict[str, tuple], rng: np.random.Generator) -> dict[str, np.ndarray]:
    out = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            out[name] = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            out[name] = rng.uniform(-a, a, size=shape)
    return out


def init_params(cfg: ModelConfig) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Glorot-uniform matrices and zero biases, deterministic in ``cfg.seed``.

    θ and γ draw from separate streams so a fresh γ does not depend on
    whether θ was initialised or loaded.
    """
    theta_shapes, gamma_shapes = param_shapes(cfg)
    theta = _init(theta_shapes, np.random.default_rng([cfg.seed, 0]))
    gamma = _init(gamma_shapes, np.random.default_rng([cfg.seed, 1]))
    return theta, gamma


def config_from_params(params: dict[str, np.ndarray], seed: int = 0) -> ModelConfig:
    Vs, E = params[THETA + "src_embed"].shape
    Vt = params[THETA + "tgt_embed"].shape[0]
    H = params[THETA + "enc_fwd.U"].shape[0]
    return ModelConfig(Vs, Vt, E, H, seed)


def split_params(params: dict[str, np.ndarray]):
    theta = {k: v for k, v in params.items() if k.startswith(THETA)}
    gamma = {k: v for k, v in params.items() if k.startswith(GAMMA)}
    return theta, gamma


def constants(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


# ------------------------------------------------------------------- blocks


@dataclass
class GRUWeights:
    W: Tensor
    b: Tensor
    U_zr: Tensor
    U_n: Tensor
    hidden: int


def gru_weights(p: dict[str, Tensor], prefix: str) -> GRUWeights:
    U = p[prefix + ".U"]
    H = U.shape[0]
    return GRUWeights(p[prefix + ".W"], p[prefix + ".b"], U[:, : 2 * H], U[:, 2 * H :], H)


def gru_cell(w: GRUWeights, x_proj: Tensor, h: Tensor) -> Tensor:
    """One GRU update given the precomputed input projection ``x @ W + b``."""
    H = w.hidden
    zr = ad.sigmoid(x_proj[:, : 2 * H] + h @ w.U_zr)
    z, r = zr[:, :H], zr[:, H:]
    n = ad.tanh(x_proj[:, 2 * H :] + (r * h) @ w.U_n)
    return n + z * (h - n)


def _masked_update(h_new: Tensor, h: Tensor, m: np.ndarray) -> Tensor:
    if m.all():
        return h_new
    mf = m.astype(float)[:, None]
    return h_new * mf + h * (1.0 - mf)


@dataclass
class EncodedSource:
    H: Tensor  # (B, T, 2*hidden): [forward; backward] per position
    mask: np.ndarray
    backward_first: Tensor  # backward state at position 1


def _check_mask(mask: np.ndarray, what: str) -> None:
    if mask.ndim != 2 or mask.shape[1] == 0 or not mask.any(axis=1).all():
        raise UsageError(f"{what}: every sequence must have at least one real position")


def encode(p: dict[str, Tensor], src: np.ndarray, mask: np.ndarray) -> EncodedSource:
    """Bidirectional GRU encoder; padded steps leave the running state untouched."""
    src = np.asarray(src)
    mask = np.asarray(mask, dtype=bool)
    _check_mask(mask, "encode")
    B, T = src.shape
    emb = ad.embedding_lookup(p[THETA + "src_embed"], src)
    layers = []
    first_bwd = None
    for prefix, steps in (("enc_fwd", range(T)), ("enc_bwd", range(T - 1, -1, -1))):
        w = gru_weights(p, THETA + prefix)
        xp = emb @ w.W + w.b
        h = Tensor(np.zeros((B, w.hidden)))
        states: list[Tensor | None] = [None] * T
        for t in steps:
            h = _masked_update(gru_cell(w, xp[:, t], h), h, mask[:, t])
            states[t] = h
        layers.append(ad.stack(states, axis=1))
        first_bwd = states[0]
    return EncodedSource(ad.concat(layers, axis=-1), mask, first_bwd)


def init_decoder_state(p: dict[str, Tensor], enc: EncodedSource) -> Tensor:
    """s_0 = tanh(W_init · backward state at the first source position)."""
    return ad.tanh(enc.backward_first @ p[THETA + "dec_init.W"])


def attend(
    s_prev: Tensor,
    states: Tensor,
    mask: np.ndarray,
    W: Tensor,
    U: Tensor,
    v: Tensor,
    projected: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Additive attention of a query over ``states`` (B, T, d).

    energies: v^T tanh(W s_prev + U state_j); weights: masked softmax;
    context: weighted sum of the states. ``projected`` may carry a
    precomputed ``states @ U``. Returns ``(alpha (B, T), context (B, d))``.
    """
    mask = np.asarray(mask, dtype=bool)
    _check_mask(mask, "attend")
    B, T, d = states.shape
    if projected is None:
        projected = states @ U
    q = ad.reshape(s_prev @ W, (B, 1, W.shape[1]))
    energy = ad.reshape(ad.tanh(projected + q) @ v, (B, T))
    alpha = ad.softmax(energy, mask=mask)
    context = ad.reshape(ad.reshape(alpha, (B, 1, T)) @ states, (B, d))
    return alpha, context


def readout(W: Tensor, b: Tensor, state: Tensor, prev_emb: Tensor, context: Tensor) -> Tensor:
    return ad.softmax(ad.concat([state, prev_emb, context], axis=-1) @ W + b)


def decoder_step(
    p: dict[str, Tensor], s_prev: Tensor, y_prev, c: Tensor
) -> tuple[Tensor, Tensor]:
    """One decoder update. Returns the new state and p(y_i | y_<i, x)."""
    e = ad.embedding_lookup(p[THETA + "tgt_embed"], np.asarray(y_prev))
    w = gru_weights(p, THETA + "dec")
    x_proj = ad.concat([e, c], axis=-1) @ w.W + w.b
    s = gru_cell(w, x_proj, s_prev)
    return s, readout(p[THETA + "out.W"], p[THETA + "out.b"], s, e, c)


@dataclass
class DecoderTrace:
    S: Tensor  # (B, Ty, hidden) decoder states s_1..s_Ty
    dist: Tensor  # (B, Ty, tgt_vocab)
    alpha: np.ndarray  # (B, Ty, Tx)
    mask: np.ndarray  # (B, Ty) real decoder steps
    n_tokens: int


def forward_pass(p: dict[str, Tensor], batch: Batch) -> tuple[Tensor, DecoderTrace]:
    """Teacher-forced translation loss: -(1/N) Σ_n Σ_i log p(y_i), padding masked."""
    N = len(batch)
    enc = encode(p, batch.src, batch.src_mask)
    s = init_decoder_state(p, enc)
    y_in, y_out, out_mask = batch.tgt[:, :-1], batch.tgt[:, 1:], batch.tgt_mask[:, 1:]
    Ty = y_in.shape[1]

    E = p[THETA + "tgt_embed"].shape[1]
    w = gru_weights(p, THETA + "dec")
    emb = ad.embedding_lookup(p[THETA + "tgt_embed"], y_in)
    emb_proj = emb @ w.W[:E] + w.b
    W_c = w.W[E:]
    W_a, U_a, v_a = p[THETA + "att.W"], p[THETA + "att.U"], p[THETA + "att.v"]
    projected = enc.H @ U_a

    states, contexts, alphas = [], [], []
    for i in range(Ty):
        alpha, c = attend(s, enc.H, enc.mask, W_a, U_a, v_a, projected)
        s = gru_cell(w, emb_proj[:, i] + c @ W_c, s)
        states.append(s)
        contexts.append(c)
        alphas.append(alpha.data)
    S = ad.stack(states, axis=1)
    C = ad.stack(contexts, axis=1)
    dist = readout(p[THETA + "out.W"], p[THETA + "out.b"], S, emb, C)
    loss = ad.cross_entropy(dist, y_out, weights=out_mask / N)
    trace = DecoderTrace(S, dist, np.stack(alphas, axis=1), out_mask, int(out_mask.sum()))
    return loss, trace


def inverse_attend(
    s_prev: Tensor, S: Tensor, target_mask: np.ndarray, p: dict[str, Tensor], projected=None
) -> tuple[Tensor, Tensor]:
    """Reconstructor attention over decoder states (inverse context vector)."""
    return attend(
        s_prev, S, target_mask,
        p[GAMMA + "inv_att.W"], p[GAMMA + "inv_att.U"], p[GAMMA + "inv_att.v"],
        projected,
    )


def reconstruction_targets(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reconstructor input ``<s> x``, output ``x </s>`` and mask."""
    B, Tx = batch.src.shape
    lengths = batch.src_mask.sum(axis=1)
    rec_in = np.zeros((B, Tx + 1), dtype=np.int64)
    rec_in[:, 0] = BOS
    rec_in[:, 1:] = batch.src
    rec_out = np.zeros((B, Tx + 1), dtype=np.int64)
    rec_out[:, :Tx] = batch.src
    rec_out[np.arange(B), lengths] = EOS
    rec_mask = np.arange(Tx + 1)[None, :] <= lengths[:, None]
    return rec_in, rec_out, rec_mask


@dataclass
class ReconstructorTrace:
    dist: Tensor  # (B, Tx+1, src_vocab)
    alpha: np.ndarray  # (B, Tx+1, Ty)
    targets: np.ndarray
    mask: np.ndarray


def reconstruct_pass(
    p: dict[str, Tensor], trace: DecoderTrace, batch: Batch
) -> tuple[Tensor, ReconstructorTrace]:
    """Teacher-forced back-translation loss from decoder states to the source."""
    N = len(batch)
    if trace.S.shape[0] != N or trace.mask.shape != batch.tgt_mask[:, 1:].shape:
        raise UsageError("decoder trace does not belong to this batch")
    S, smask = trace.S, trace.mask
    pool = smask / smask.sum(axis=1, keepdims=True)
    mean_state = ad.reshape(Tensor(pool[:, None, :]) @ S, (N, S.shape[2]))
    s = ad.tanh(mean_state @ p[GAMMA + "rec_init.W"])

    rec_in, rec_out, rec_mask = reconstruction_targets(batch)
    E = p[THETA + "src_embed"].shape[1]
    w = gru_weights(p, GAMMA + "rec")
    emb = ad.embedding_lookup(p[THETA + "src_embed"], rec_in)
    emb_proj = emb @ w.W[:E] + w.b
    W_c = w.W[E:]
    projected = S @ p[GAMMA + "inv_att.U"]

    states, contexts, alphas = [], [], []
    for i in range(rec_in.shape[1]):
        alpha, c = inverse_attend(s, S, smask, p, projected)
        s = gru_cell(w, emb_proj[:, i] + c @ W_c, s)
        states.append(s)
        contexts.append(c)
        alphas.append(alpha.data)
    dist = readout(
        p[GAMMA + "rec_out.W"], p[GAMMA + "rec_out.b"],
        ad.stack(states, axis=1), emb, ad.stack(contexts, axis=1),
    )
    loss = ad.cross_entropy(dist, rec_out, weights=rec_mask / N)
    return loss, ReconstructorTrace(dist, np.stack(alphas, axis=1), rec_out, rec_mask)


# ------------------------------------------------------------ conveniences


@dataclass
class LossValues:
    total: float
    forward: float
    backward: float | None
    n_tgt_tokens: int
    n_src_tokens: int


def compute_loss(
    p: dict[str, Tensor], batch: Batch, lam: float, reconstruct: bool
) -> tuple[Tensor, LossValues]:
    loss_f, trace = forward_pass(p, batch)
    n_src = int(batch.src_mask.sum()) + len(batch)
    if not reconstruct:
        return loss_f, LossValues(loss_f.item(), loss_f.item(), None, trace.n_tokens, n_src)
    loss_b, _ = reconstruct_pass(p, trace, batch)
    total = loss_joint(loss_f, loss_b, lam)
    return total, LossValues(total.item(), loss_f.item(), loss_b.item(), trace.n_tokens, n_src)


def loss_joint(loss_forward, loss_backward, lam: float):
    """Negated joint objective: forward loss + λ · reconstruction loss."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return loss_forward + loss_backward * lam


def loss_and_grads(
    params: dict[str, np.ndarray], batch: Batch, lam: float = 1.0, reconstruct: bool = True
) -> tuple[LossValues, dict[str, np.ndarray]]:
    tape = ad.Tape()
    p = tape.bind(params)
    loss, values = compute_loss(p, batch, lam, reconstruct)
    return values, tape.backward(loss)


def evaluate_loss(
    params: dict[str, np.ndarray], batch: Batch, lam: float = 1.0, reconstruct: bool = True
) -> LossValues:
    return compute_loss(constants(params), batch, lam, reconstruct)[1]


def objective(batch: Batch, lam: float = 1.0, reconstruct: bool = True):
    """``params -> (loss, gradients)`` closure, precision following the params' dtype."""

    def fn(params: dict[str, np.ndarray]):
        tape = ad.Tape()
        loss, _ = compute_loss(tape.bind(params), batch, lam, reconstruct)
        return loss.data, tape.backward(loss)

    return fn
