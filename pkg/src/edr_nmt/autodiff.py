"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to tensors that live on it.
Parameters are registered on the tape by name, and :meth:`Tape.backward`
returns a gradient map with one entry per registered parameter. Tensors
without a tape are constants: operations on constants only are evaluated
eagerly and nothing is recorded, which is how inference runs.

The primitive set is closed: matmul, add, sub, mul, tanh, sigmoid, softmax,
concat, slice, reshape, embedding_lookup, cross_entropy, mean and sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


class UsageError(ValueError):
    pass


class DeterminismError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "tape", "name")

    def __init__(self, data, tape: "Tape | None" = None, name: str | None = None):
        data = np.asarray(data)
        # wider float types pass through so the gradient oracle can run in extended precision
        if not np.issubdtype(data.dtype, np.floating) or data.dtype.itemsize < 8:
            data = data.astype(DTYPE)
        self.data = data
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications (the computation record)."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise UsageError(f"parameter {name!r} registered twice")
        t = Tensor(array, tape=self, name=name)
        self.params[name] = t
        return t

    def bind(self, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {name: self.param(name, arr) for name, arr in params.items()}

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` w.r.t. every registered parameter.

        Parameters the loss does not reach get exact zero tensors.
        """
        if loss.tape is not self:
            raise UsageError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise UsageError(f"loss must be scalar, got shape {loss.shape}")
        produced = {id(n.output) for n in self.nodes}
        if id(loss) not in produced and loss.name not in self.params:
            raise UsageError("loss is not an output recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or inp.tape is not self:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for name, t in self.params.items():
            g = grads.get(id(t))
            out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
        return out


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def _result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    tape = next((t.tape for t in inputs if t.tape is not None), None)
    out = Tensor(data, tape=tape)
    if tape is not None:
        for t in inputs:
            if t.tape is not None and t.tape is not tape:
                raise UsageError("inputs belong to different tapes")
        tape.nodes.append(Node(op, inputs, out, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D @ 2-D, batched 3-D @ 3-D, and 3-D @ 2-D."""
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 3 and (a.ndim != 3 or a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(B, -1, -2)
        if B.ndim == 2:
            gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _result("matmul", A @ B, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data
    return _result("mul", A * B, (a, b),
                   lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` False entries get exactly zero weight."""
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax: empty input of shape {x.shape}")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise UsageError("softmax: a row is fully masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("softmax", y, (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise UsageError("concat: nothing to concatenate")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", data, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Stack along a new axis (reshape + concat)."""
    parts = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + axis + 1, 1)
        parts.append(reshape(t, tuple(shape)))
    return concat(parts, axis=axis)


def slice_(x: Tensor, index) -> Tensor:
    data = x.data[index]
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _result("slice", np.array(data), (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} to {shape}") from None
    return _result("reshape", data, (x,), lambda g: (g.reshape(old),))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise UsageError(f"embedding ids must be integers, got {ids.dtype}")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"embedding id out of range [0, {V})")
    shape = table.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result("embedding_lookup", table.data[ids], (table,), bwd)


def cross_entropy(dist: Tensor, target, weights=None) -> Tensor:
    """Sum over rows of ``-weight * log(max(dist[target], 1e-12))``.

    With a 1-D ``dist`` and an integer ``target`` this is the plain
    negative log-probability of one token.
    """
    P = dist.data
    V = P.shape[-1]
    t = np.asarray(target)
    if not np.issubdtype(t.dtype, np.integer):
        raise UsageError("cross_entropy target must be integer ids")
    if t.shape != P.shape[:-1]:
        raise DimensionError(f"cross_entropy: targets {t.shape} vs distribution {P.shape}")
    if t.size and (t.min() < 0 or t.max() >= V):
        raise IndexError(f"target id out of range [0, {V})")
    w = np.ones(t.shape) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), t.shape)
    picked = np.take_along_axis(P, t[..., None], axis=-1)[..., 0]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = -(w * np.log(clamped)).sum()

    def bwd(g):
        full = np.zeros_like(P)
        local = np.where(picked > PROB_FLOOR, -w / clamped, 0.0) * g
        np.put_along_axis(full, t[..., None], local[..., None], axis=-1)
        return (full,)

    return _result("cross_entropy", np.asarray(loss), (dist,), bwd)


def sum_(x: Tensor) -> Tensor:
    shape = x.shape
    return _result("sum", np.asarray(x.data.sum()), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _result("mean", np.asarray(x.data.mean()), (x,),
                   lambda g: (np.full(shape, g / n, dtype=g.dtype),))


# ----------------------------------------------------------- gradient check


def finite_diff_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[object, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    oracle_dtype=np.longdouble,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(loss_value, gradient_map)`` and must compute
    in the dtype of the arrays it is given. The analytic gradient is taken at
    ``params`` as given; the central differences are evaluated on a copy cast
    to ``oracle_dtype``. Extended precision keeps the difference quotient's
    rounding noise (about 1e-16 * |loss| / eps in float64) well below the
    gradients of order 1e-8 that appear at initialisation.

    Each tensor is checked on every coordinate when it has at most
    ``max_coords`` entries, otherwise on a seeded random sample of that size.
    The relative error uses the denominator ``max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise UsageError("eps must be positive")
    base, grads = loss_fn(params)
    again, _ = loss_fn(params)
    if np.asarray(base) != np.asarray(again):
        raise DeterminismError(f"loss_fn is not deterministic: {base!r} != {again!r}")

    work = {k: np.array(v, dtype=oracle_dtype) for k, v in params.items()}
    h = oracle_dtype(eps)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in work.items():
        if arr.size <= max_coords:
            coords = np.arange(arr.size)
        else:
            coords = np.sort(rng.choice(arr.size, size=max_coords, replace=False))
        for k in coords:
            idx = np.unravel_index(k, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus, _ = loss_fn(work)
            arr[idx] = orig - h
            f_minus, _ = loss_fn(work)
            arr[idx] = orig
            numeric = float((np.asarray(f_plus, dtype=oracle_dtype) - f_minus) / (2 * h))
            a = float(grads[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
