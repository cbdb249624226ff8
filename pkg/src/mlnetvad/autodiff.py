"""Minimal reverse-mode automatic differentiation over numpy arrays.

A dynamic graph is rebuilt for every forward pass: each op output records
its parent tensors and a closure that propagates the incoming gradient to
them. ``backward`` on a scalar walks the graph once in reverse topological
order. Gradients accumulate (+=) into leaves until ``zero_grads`` is
called, which is what batch-level gradient accumulation relies on.

Non-finite detection: every op that can turn finite inputs into NaN or
infinity (the arithmetic ops, log, and the reductions) checks its output
and raises. Ops whose outputs are finite whenever their inputs are finite
(activations, shape ops, clip, max) skip the runtime check; together the
two groups guarantee all tensors stay finite.

Only the operations the network needs are implemented; there is no
general broadcasting machinery beyond numpy's, and no GPU path.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, NonFiniteError, ShapeMismatch

__all__ = [
    "Tensor",
    "backward",
    "concat",
    "grad_enabled",
    "leaky_relu",
    "lstm_cell",
    "matmul",
    "no_grad",
    "take_rows",
    "transpose",
    "zero_grads",
]

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph construction; forward values are unaffected."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return arr


def _check_finite(data: np.ndarray, op: str) -> None:
    # A float sum is non-finite iff some element is, as long as the finite
    # values cannot overflow the accumulator; everything flowing through
    # this engine is magnitude-bounded (features, activations, clipped
    # gradients), so the cheap reduction is a sound detector.
    if not np.isfinite(data.sum()):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """An n-d float array with an optional gradient slot.

    Leaves are created with ``requires_grad=True``; op outputs carry the
    backward closure. ``data`` must stay finite; creation checks.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        _check_finite(self.data, "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_max(self, axis=axis, keepdims=keepdims)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def log(self) -> "Tensor":
        return log(self)

    def clip(self, lo: float, hi: float) -> "Tensor":
        return clip(self, lo, hi)

    def backward(self) -> None:
        backward(self)


# -- graph plumbing ----------------------------------------------------


def _raw(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if backward_fn is not None:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _make(data: np.ndarray, op: str, parents: tuple, backward_fn) -> Tensor:
    _check_finite(data, op)
    return _raw(data, parents, backward_fn)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _track_any(*ts: Tensor) -> bool:
    if not _grad_enabled:
        return False
    for t in ts:
        if t.requires_grad or t._backward is not None:
            return True
    return False


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    """Drop accumulated gradients on the given tensors."""
    for t in tensors:
        t.grad = None


def backward(loss: Tensor) -> None:
    """Populate gradients of everything the scalar ``loss`` depends on.

    Visits each graph node exactly once, in reverse topological order.
    Leaf gradients accumulate across calls; interior gradients live only
    as long as the graph itself.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise binary ops --------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    if not _grad_enabled or not (
        a.requires_grad or a._backward is not None or b.requires_grad or b._backward is not None
    ):
        return _make(data, "add", (), None)

    def backward_fn(g):
        if a.requires_grad or a._backward is not None:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad or b._backward is not None:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, "add", (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch(f"sub: cannot broadcast {a.shape} with {b.shape}") from None
    if not _grad_enabled or not (
        a.requires_grad or a._backward is not None or b.requires_grad or b._backward is not None
    ):
        return _make(data, "sub", (), None)

    def backward_fn(g):
        if a.requires_grad or a._backward is not None:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad or b._backward is not None:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, "sub", (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    if not _grad_enabled or not (
        a.requires_grad or a._backward is not None or b.requires_grad or b._backward is not None
    ):
        return _make(data, "mul", (), None)

    def backward_fn(g):
        if a.requires_grad or a._backward is not None:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._backward is not None:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeMismatch(f"div: cannot broadcast {a.shape} with {b.shape}") from None
    if not _grad_enabled or not (
        a.requires_grad or a._backward is not None or b.requires_grad or b._backward is not None
    ):
        return _make(data, "div", (), None)

    def backward_fn(g):
        if a.requires_grad or a._backward is not None:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad or b._backward is not None:
            _accum(b, _unbroadcast(-g * data / b.data, b.data.shape))

    return _make(data, "div", (a, b), backward_fn)


# -- matmul -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D and 2-D operands, numpy semantics."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data
    if not _grad_enabled or not (
        a.requires_grad or a._backward is not None or b.requires_grad or b._backward is not None
    ):
        return _make(data, "matmul", (), None)

    def backward_fn(g):
        track_a = a.requires_grad or a._backward is not None
        track_b = b.requires_grad or b._backward is not None
        if a.ndim == 2 and b.ndim == 2:
            if track_a:
                _accum(a, g @ b.data.T)
            if track_b:
                _accum(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            if track_a:
                _accum(a, b.data @ g)
            if track_b:
                _accum(b, np.outer(a.data, g))
        elif a.ndim == 2 and b.ndim == 1:
            if track_a:
                _accum(a, np.outer(g, b.data))
            if track_b:
                _accum(b, a.data.T @ g)
        else:  # 1-D dot 1-D
            if track_a:
                _accum(a, g * b.data)
            if track_b:
                _accum(b, g * a.data)

    return _make(data, "matmul", (a, b), backward_fn)


# -- activations and pointwise functions --------------------------------
# (bounded outputs: no finite check needed)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        _accum(x, g * (1.0 - data * data))

    return _raw(data, (x,), backward_fn)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-x) overflowing to inf yields exactly 0.0, the correct limit,
    # so only the warning needs suppressing; no NaN can appear for
    # finite x
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x: Tensor) -> Tensor:
    data = _stable_sigmoid(x.data)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        _accum(x, g * data * (1.0 - data))

    return _raw(data, (x,), backward_fn)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    data = np.where(x.data > 0, x.data, slope * x.data)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        _accum(x, g * np.where(x.data > 0, 1.0, slope).astype(x.data.dtype))

    return _raw(data, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _make(data, "log", (), None)

    def backward_fn(g):
        _accum(x, g / x.data)

    return _make(data, "log", (x,), backward_fn)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the range."""
    data = np.clip(x.data, lo, hi)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        mask = (x.data >= lo) & (x.data <= hi)
        _accum(x, g * mask.astype(x.data.dtype))

    return _raw(data, (x,), backward_fn)


# -- fused LSTM cell ------------------------------------------------------


def lstm_cell(gates: Tensor, c_prev: Tensor) -> Tensor:
    """One LSTM step from pre-activation gates, returning concat([h, c]).

    ``gates`` is (4H,), packed [input, forget, candidate, output]; the
    candidate uses tanh, the rest sigmoid. A single fused node replaces
    the ten-odd elementwise ops of the textbook expression (a hot path:
    it runs once per frame per direction per layer); the backward is the
    standard cell derivative and is pinned to the unfused expression by
    tests. All outputs are bounded combinations of the inputs, so no
    finite check is needed.
    """
    h_dim = c_prev.data.shape[0]
    if gates.data.shape != (4 * h_dim,):
        raise ShapeMismatch(f"lstm_cell: gates {gates.shape} do not match state ({h_dim},)")
    z = gates.data
    i = _stable_sigmoid(z[0:h_dim])
    f = _stable_sigmoid(z[h_dim : 2 * h_dim])
    g_cand = np.tanh(z[2 * h_dim : 3 * h_dim])
    o = _stable_sigmoid(z[3 * h_dim :])
    c = f * c_prev.data + i * g_cand
    tc = np.tanh(c)
    h = o * tc
    data = np.concatenate([h, c])
    if not _grad_enabled or not (
        gates.requires_grad
        or gates._backward is not None
        or c_prev.requires_grad
        or c_prev._backward is not None
    ):
        return _raw(data, (), None)

    def backward_fn(grad):
        gh = grad[0:h_dim]
        dc = grad[h_dim:] + gh * o * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[0:h_dim] = dc * g_cand * i * (1.0 - i)
        dz[h_dim : 2 * h_dim] = dc * c_prev.data * f * (1.0 - f)
        dz[2 * h_dim : 3 * h_dim] = dc * i * (1.0 - g_cand * g_cand)
        dz[3 * h_dim :] = gh * tc * o * (1.0 - o)
        if gates.requires_grad or gates._backward is not None:
            _accum(gates, dz)
        if c_prev.requires_grad or c_prev._backward is not None:
            _accum(c_prev, dc * f)

    return _raw(data, (gates, c_prev), backward_fn)


# -- reductions ----------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _make(data, "sum", (), None)

    def backward_fn(g):
        _accum(x, _expand_reduced(g, x.data.shape, axis, keepdims))

    return _make(data, "sum", (x,), backward_fn)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _make(data, "mean", (), None)

    def backward_fn(g):
        _accum(x, _expand_reduced(g / count, x.data.shape, axis, keepdims))

    return _make(data, "mean", (x,), backward_fn)


def tensor_max(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient routes to the first maximal element."""
    data = x.data.max(axis=axis, keepdims=keepdims)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        if axis is None:
            gx.flat[np.argmax(x.data)] = g if np.ndim(g) == 0 else g.item()
        else:
            idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
            ge = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(gx, idx, ge, axis)
        _accum(x, gx)

    return _raw(data, (x,), backward_fn)


# -- shape ops ------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        _accum(x, g.reshape(x.data.shape))

    return _raw(data, (x,), backward_fn)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeMismatch(f"transpose expects a 2-D tensor, got {x.shape}")
    data = x.data.T
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        _accum(x, g.T)

    return _raw(data, (x,), backward_fn)


def _getitem(x: Tensor, key) -> Tensor:
    data = x.data[key]
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[key] += g

    return _raw(data, (x,), backward_fn)


def take_rows(x: Tensor, indices) -> Tensor:
    """Per-row gather from a 2-D tensor: out[t] = x[t, indices[t]]."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeMismatch(
            f"take_rows expects (T, n) tensor and T indices, got {x.shape} and {idx.shape}"
        )
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]
    if not _grad_enabled or not (x.requires_grad or x._backward is not None):
        return _raw(data, (), None)

    def backward_fn(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, idx), g)

    return _raw(data, (x,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ShapeMismatch("concat of an empty sequence")
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeMismatch(
                f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}"
            )
    data = np.concatenate([t.data for t in ts], axis=axis)
    if not _track_any(*ts):
        return _raw(data, (), None)

    sizes = [t.shape[axis] for t in ts]

    def backward_fn(g):
        offset = 0
        index: list = [slice(None)] * g.ndim
        for t, size in zip(ts, sizes):
            if t.requires_grad or t._backward is not None:
                index[axis] = slice(offset, offset + size)
                _accum(t, g[tuple(index)])
            offset += size

    return _raw(data, tuple(ts), backward_fn)
