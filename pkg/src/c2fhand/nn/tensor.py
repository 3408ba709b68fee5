"""A small reverse-mode autodiff engine over numpy arrays.

Every op builds its output eagerly and records a closure that maps the
output gradient to input gradients. ``backward`` replays those closures
in reverse topological order.
"""
from __future__ import annotations

import contextlib

import numpy as np
import scipy.sparse as sp

_STATE = {"dtype": np.float64, "check_finite": True, "grad_enabled": True}


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


def get_dtype():
    return _STATE["dtype"]


def set_default_dtype(dtype) -> None:
    _STATE["dtype"] = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    old = _STATE["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _STATE["dtype"] = old


@contextlib.contextmanager
def checked(flag: bool = True):
    old = _STATE["check_finite"]
    _STATE["check_finite"] = flag
    try:
        yield
    finally:
        _STATE["check_finite"] = old


@contextlib.contextmanager
def no_grad():
    old = _STATE["grad_enabled"]
    _STATE["grad_enabled"] = False
    try:
        yield
    finally:
        _STATE["grad_enabled"] = old


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, _parents=(), _backward=None, _op=""):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operators
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


class Parameter(Tensor):
    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=get_dtype()), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def _make(data, parents, backward, op):
    if _STATE["check_finite"] and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    track = _STATE["grad_enabled"] and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topo(root: Tensor):
    order, state = [], {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        if state.get(key) == 2:
            continue
        if state.get(key) == 1:
            raise GraphError("cycle detected in the recorded graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                s = state.get(id(p))
                if s == 1:
                    raise GraphError("cycle detected in the recorded graph")
                if s is None:
                    stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None  # intermediate gradients are not retained


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, unbroadcast(g, a.shape))
        _accum(b, unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, unbroadcast(g, a.shape))
        _accum(b, unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * 0.5 / out), "sqrt")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: _accum(a, g * np.sign(a.data)), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0), (a,), lambda g: _accum(a, g * mask), "relu")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * g * a.data), "square")


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: _accum(a, g.transpose(inv)), "transpose")


def swapaxes(a, i, j) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, splits, axis=ax)):
            _accum(t, piece)

    return _make(out, tuple(ts), bw, "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.asarray(a.data[idx]), (a,), bw, "getitem")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                # fold every leading dim of a into the contraction
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            _accum(b, gb)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def sparse_matmul(S, x) -> Tensor:
    """S @ x along the vertex axis (-2) for a constant scipy sparse S."""
    x = as_tensor(x)
    S = sp.csr_matrix(S)
    St = S.T.tocsr()

    def apply(M, arr):
        if arr.ndim == 2:
            return np.asarray(M @ arr)
        lead = arr.shape[:-2]
        n, c = arr.shape[-2:]
        flat = np.moveaxis(arr.reshape(-1, n, c), 1, 0).reshape(n, -1)
        res = np.asarray(M @ flat).reshape(M.shape[0], -1, c)
        return np.moveaxis(res, 0, 1).reshape(*lead, M.shape[0], c)

    if x.shape[-2] != S.shape[1]:
        raise ValueError(f"sparse_matmul: {S.shape} vs vertex axis {x.shape[-2]}")
    out = apply(S, x.data).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: _accum(x, apply(St, g)), "sparse_matmul")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), bw, "softmax")


def bce_with_logits(logits, target) -> Tensor:
    """Mean binary cross-entropy, stable form max(z,0) - z*t + log(1+exp(-|z|))."""
    z = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=z.dtype)
    if z.shape != t.shape:
        raise ValueError(f"bce: shape mismatch {z.shape} vs {t.shape}")
    x = z.data
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def bw(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        _accum(z, g * (sig - t) / n)

    return _make(np.asarray(per.mean()), (z,), bw, "bce_with_logits")
