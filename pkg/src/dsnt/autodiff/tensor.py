"""Dense tensors and a reverse-mode tape.

Operations executed inside ``with Tape() as tape:`` are recorded; outside a
tape they only compute values, which is what evaluation code relies on.
Gradients live in the dict returned by :func:`backward`, never on the
tensors, so parameters can be shared read-only between tapes on different
threads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

DTYPE = np.float64

_state = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array, optionally tracked by the active tape."""

    __slots__ = ("data", "tracked", "name")
    __array_priority__ = 100

    def __init__(self, data, tracked: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tracked = tracked
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return slice_(self, key)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, tracked=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeEntry:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of the primitive operations of one computation."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.entries)


class ShapeError(ValueError):
    pass


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor],
          vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    value = np.asarray(value, dtype=DTYPE)
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite result in '{op}'")
    tape = current_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out = Tensor(value, tracked=True)
        tape.entries.append(TapeEntry(op, out, tuple(inputs), vjp))
        return out
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.data * s, (a,), lambda g: (g * s,))


def dropout(a, mask: np.ndarray) -> Tensor:
    """Apply a precomputed (already rescaled) dropout mask."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=DTYPE)
    if mask.shape != a.shape:
        raise ShapeError(f"dropout: mask shape {mask.shape} != input shape {a.shape}")
    return _emit("dropout", a.data * mask, (a,), lambda g: (g * mask,))


def dropout_mask(shape, keep: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout mask: kept units are scaled by 1/keep."""
    if not 0.0 < keep <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {keep}")
    return (rng.random(shape) < keep).astype(DTYPE) / keep


# --- nonlinearities ----------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = (a.data > 0).astype(DTYPE)
    return _emit("relu", a.data * on, (a,), lambda g: (g * on,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit("exp", y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if np.any(x <= 0):
        raise FloatingPointError("non-finite result in 'log'")
    return _emit("log", np.log(x), (a,), lambda g: (g / x,))


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    y = _softmax(a.data, axis)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _emit("softmax", y, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(y)
    return _emit("log_softmax", y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# --- reductions ----------------------------------------------------------------

def sum_(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    return _emit("sum", a.data.sum(axis=axis), (a,), vjp)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


# --- linear algebra ----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (matvec, vecmat, matmat, dot)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2:
            return np.outer(g, bd), ad.T @ g
        if bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad
    return _emit("matmul", ad @ bd, (a, b), vjp)


def matvec(m, v) -> Tensor:
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim != 2 or v.ndim != 1:
        raise ShapeError(f"matvec: expected (matrix, vector), got {m.shape} and {v.shape}")
    return matmul(m, v)


# --- shape manipulation ----------------------------------------------------------

def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: no inputs")
    try:
        value = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _emit("concat", value, parts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("stack: no inputs")
    try:
        value = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {exc}") from None
    n = len(parts)
    return _emit("stack", value, parts,
                 lambda g: tuple(np.take(g, k, axis=axis) for k in range(n)))


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis for k in parts)


def slice_(a, key) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = _is_basic_index(key)

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        if basic:
            out[key] = g
        else:
            np.add.at(out, key, g)
        return (out,)
    try:
        value = a.data[key]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc}") from None
    return _emit("slice", value, (a,), vjp)


def take(table, indices) -> Tensor:
    """Row gather along the first axis (embedding lookup)."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"take: index out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)
    return _emit("take", table.data[idx], (table,), vjp)


embedding_lookup = take


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _emit("reshape", value, (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _emit("transpose", a.data.T, (a,), lambda g: (g.T,))


# --- losses --------------------------------------------------------------------

def cross_entropy(logits, target: int) -> Tensor:
    """Softmax cross-entropy of a single logit vector against a class index."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy: expected a logit vector, got shape {logits.shape}")
    if not 0 <= target < logits.shape[0]:
        raise ShapeError(f"cross_entropy: target {target} out of range")
    p = _softmax(logits.data, 0)
    loss = -np.log(max(p[target], np.finfo(DTYPE).tiny))

    def vjp(g):
        d = p.copy()
        d[target] -= 1.0
        return (g * d,)
    return _emit("cross_entropy", np.array(loss), (logits,), vjp)


# --- reverse pass ---------------------------------------------------------------

def backward(tape: Tape, loss: Tensor,
             params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(.) backwards through ``tape``.

    Returns gradients for ``params`` keyed like the mapping; parameters the
    loss does not reach get zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()  # accumulators safe to update in place
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue
        for inp, gi in zip(entry.inputs, entry.vjp(g)):
            if gi is None or not inp.tracked:
                continue
            key = id(inp)
            if key not in grads:
                grads[key] = gi
            elif key in owned:
                grads[key] += gi
            else:
                grads[key] = grads[key] + gi
                owned.add(key)
    if params is None:
        return {}
    return {name: grads.get(id(p), np.zeros_like(p.data)).reshape(p.shape)
            for name, p in params.items()}
