"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op builds its result eagerly and, when grad mode is on and an input
requires a gradient, records a closure that maps the output gradient to input
gradients.  ``backward`` walks the recorded graph once in reverse topological
order and then releases it.
"""
from __future__ import annotations

import contextlib

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class StaleTape(RuntimeError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(like.shape, float(arr))
    return Tensor(arr)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = const(a)
    b = _wrap(b, a)
    _same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = const(a)
    b = _wrap(b, a)
    _same_shape(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = const(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    b = _wrap(b, a)
    _same_shape(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, k: float) -> Tensor:
    def bw(g):
        _accum(a, g * k)

    return _make(a.data * k, (a,), bw)


def relu(a: Tensor) -> Tensor:
    on = a.data > 0

    def bw(g):
        _accum(a, g * on)

    return _make(np.where(on, a.data, 0.0), (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, 2.0 * g * a.data)

    return _make(a.data * a.data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bw(g):
        _accum(a, g * y)

    return _make(y, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    _same_shape(a, b, "maximum")
    pick_a = a.data >= b.data

    def bw(g):
        _accum(a, g * pick_a)
        _accum(b, g * ~pick_a)

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def plogp(a: Tensor) -> Tensor:
    """``p * log(p)`` with the convention ``0 log 0 = 0`` (and zero gradient there)."""
    pos = a.data > 0
    safe = np.where(pos, a.data, 1.0)
    y = np.where(pos, a.data * np.log(safe), 0.0)

    def bw(g):
        _accum(a, g * np.where(pos, np.log(safe) + 1.0, 0.0))

    return _make(y, (a,), bw)


# --------------------------------------------------------------------------
# reductions and shape


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    if axis is None:
        def bw(g):
            _accum(a, np.broadcast_to(g, a.shape))

        return _make(np.asarray(a.data.sum()), (a,), bw)

    def bw_axis(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(a.data.sum(axis=axis), (a,), bw_axis)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(sum(a), 1.0 / n) if n else Tensor(0.0)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T, (a,), bw)


def concat(parts, axis=-1) -> Tensor:
    parts = [const(p) for p in parts]
    datas = [p.data for p in parts]
    try:
        y = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[d.shape for d in datas]}") from exc
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, bounds, axis=axis)):
            _accum(p, gp)

    return _make(y, parts, bw)


def broadcast_rows(a: Tensor, n: int) -> Tensor:
    """Repeat a ``[D]`` vector into ``[n, D]``."""
    if a.data.ndim != 1:
        raise ShapeMismatch(f"broadcast_rows expects a vector, got {a.shape}")

    def bw(g):
        _accum(a, g.sum(axis=0))

    return _make(np.broadcast_to(a.data, (n, a.shape[0])).copy(), (a,), bw)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ weight.T + bias`` for ``x`` of shape ``[N, in]``."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {weight.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        _accum(x, g @ weight.data)
        _accum(weight, g.T @ x.data)
        if bias is not None:
            _accum(bias, g.sum(axis=0))

    return _make(y, parents, bw)


# --------------------------------------------------------------------------
# indexing / graph ops


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _make(a.data[idx], (a,), bw)


def segment_mean(values: Tensor, segment, num_segments: int) -> Tensor:
    """Mean of ``values`` rows grouped by ``segment``; empty segments give zeros."""
    segment = np.asarray(segment, dtype=np.intp)
    if len(segment) != values.shape[0]:
        raise ShapeMismatch(f"segment_mean: {len(segment)} ids for {values.shape[0]} rows")
    counts = np.bincount(segment, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)[:, None]
    total = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(total, segment, values.data)

    def bw(g):
        _accum(values, (g / denom)[segment])

    return _make(total / denom, (values,), bw)


def gather_pairs(a: Tensor, rows, cols) -> Tensor:
    """``[P]`` vector of entries ``a[rows[k], cols[k]]``."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, cols), g)
            _accum(a, full)

    return _make(a.data[rows, cols], (a,), bw)


def scatter_pairs(v: Tensor, rows, cols, shape) -> Tensor:
    """Matrix of ``shape`` holding ``v[k]`` at ``(rows[k], cols[k])`` and zeros elsewhere."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    flat = v.data.reshape(-1)
    if flat.shape[0] != len(rows):
        raise ShapeMismatch(f"scatter_pairs: {flat.shape[0]} values for {len(rows)} pairs")
    out = np.zeros(shape)
    out[rows, cols] = flat

    def bw(g):
        _accum(v, g[rows, cols].reshape(v.shape))

    return _make(out, (v,), bw)


def masked_softmax(a: Tensor, mask) -> Tensor:
    """Row softmax over entries where ``mask`` is true; exact zeros elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeMismatch(f"masked_softmax: mask {mask.shape} vs {a.shape}")
    if mask.shape[0] and not mask.any(axis=1).all():
        raise ValueError("masked_softmax: a row has no allowed entry")
    z = np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        _accum(a, p * (g - inner))

    return _make(p, (a,), bw)


# --------------------------------------------------------------------------


def backward(loss: Tensor, wrt=None):
    """Reverse sweep from a scalar ``loss``; gradients accumulate into ``.grad``.

    The recorded graph is released afterwards, so a second call on the same
    graph raises :class:`StaleTape`.  With ``wrt`` given, returns the list of
    their gradients (zeros for tensors the loss does not depend on).
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise StaleTape("this graph was already differentiated; run the forward pass again")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise StaleTape("graph contains an already-differentiated node")
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node._backward = None
            node._parents = ()
            node._consumed = True
            node.grad = None
    loss._consumed = True

    if wrt is not None:
        return [np.zeros_like(t.data) if t.grad is None else t.grad for t in wrt]
    return None
