"""Reverse-mode automatic differentiation over numpy arrays.

Tensors form a DAG of operation records; ``backward()`` walks the graph in
reverse topological order exactly once per reachable node.  Training runs in
float32; tests switch to float64 via ``use_dtype`` for finite-difference
gradient checks.
"""

from __future__ import annotations

import contextlib
from typing import Iterable

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class ConfigurationError(ValueError):
    """Raised for shape/argument mismatches the caller must fix."""


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (rollouts, evaluation)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled():
    return _GRAD_ENABLED


def _coerce(data):
    if isinstance(data, np.ndarray):
        if data.dtype == np.float32 or data.dtype == np.float64:
            return data
        return data.astype(_DEFAULT_DTYPE)
    return np.asarray(data, dtype=_DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _coerce(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- graph plumbing -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents, backward) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.grad = None
        t.requires_grad = True
        t._parents = parents
        t._backward = backward
        return t

    def _accum(self, g: np.ndarray):
        # never mutate grads in place: results of multiple accumulations may
        # alias upstream grad buffers
        if self.grad is not None:
            self.grad = self.grad + g
        elif self._backward is None:
            # leaves (parameters) own their grad buffer: passthrough ops can
            # hand one upstream buffer to several leaves
            self.grad = np.array(g)
        else:
            self.grad = g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- conveniences ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # -- operators (defined below as module functions) -------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(*ts: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in ts)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- primitive operations ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    if not _track(a, b):
        return Tensor(out)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return Tensor._node(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    if not _track(a, b):
        return Tensor(out)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._node(out, (a, b), bwd)


def power(a, p) -> Tensor:
    a = as_tensor(a)
    out = a.data**p
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g * (p * a.data ** (p - 1)))

    return Tensor._node(out, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ConfigurationError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data
    if not _track(a, b):
        return Tensor(out)

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor._node(out, (a, b), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g * out)

    return Tensor._node(out, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g / a.data)

    return Tensor._node(out, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g * (1.0 - out * out))

    return Tensor._node(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g * (out * (1.0 - out)))

    return Tensor._node(out, (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g * (a.data > 0))

    return Tensor._node(out, (a,), bwd)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accum(np.broadcast_to(gg, a.data.shape).copy())

    return Tensor._node(out, (a,), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g.reshape(a.data.shape))

    return Tensor._node(out, (a,), bwd)


def take(a, idx) -> Tensor:
    """Indexing/slicing; gradient scatters back with duplicate accumulation."""
    a = as_tensor(a)
    out = a.data[idx]
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a._accum(buf)

    return Tensor._node(out, (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    if not _track(*ts):
        return Tensor(out)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor._node(out, tuple(ts), bwd)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    if not _track(a, b):
        return Tensor(out)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~take_a, b.data.shape))

    return Tensor._node(out, (a, b), bwd)


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    if not _track(a):
        return Tensor(out)
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        a._accum(g * inside)

    return Tensor._node(out, (a,), bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    if not _track(a):
        return Tensor(out)

    def bwd(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return Tensor._node(out, (a,), bwd)


def gaussian_reparameterize(mu: Tensor, logvar: Tensor, noise) -> Tensor:
    """sample = mu + exp(0.5*logvar) * noise; grads flow to mu and logvar."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    noise = as_tensor(noise)
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise ConfigurationError(
            f"reparameterize shapes differ: {mu.shape} {logvar.shape} {noise.shape}"
        )
    return add(mu, mul(exp(mul(logvar, 0.5)), noise.detach()))
