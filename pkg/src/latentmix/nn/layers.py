"""Network layers: fused linear/GRU/dropout ops plus small layer classes.

GRU convention used throughout (and assumed by checkpoints): gates are stacked
in (z, r, n) order in the weight matrices; separate input and hidden biases;
the reset gate multiplies the hidden-to-candidate path; and the update gate
weights the *candidate*:

    z = sigmoid(x Wxz + bxz + h Whz + bhz)
    r = sigmoid(x Wxr + bxr + h Whr + bhr)
    n = tanh(x Wxn + bxn + r * (h Whn + bhn))
    h' = (1 - z) * h + z * n
"""

from __future__ import annotations

import numpy as np

from .tensor import ConfigurationError, Tensor, _sigmoid, _track, as_tensor


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ W (+ b).  x: [batch, in], W: [in, out], b: [out]."""
    x, W = as_tensor(x), as_tensor(W)
    if x.data.shape[-1] != W.data.shape[0]:
        raise ConfigurationError(
            f"linear: input dim {x.data.shape[-1]} != weight rows {W.data.shape[0]}"
        )
    if b is not None and b.data.shape[-1] != W.data.shape[1]:
        raise ConfigurationError(
            f"linear: bias dim {b.data.shape[-1]} != weight cols {W.data.shape[1]}"
        )
    out = x.data @ W.data
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)
    if not _track(*parents):
        return Tensor(out)

    def bwd(g):
        if x.requires_grad:
            x._accum(g @ W.data.T)
        if W.requires_grad:
            W._accum(x.data.T @ g)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=tuple(range(g.ndim - 1))))

    return Tensor._node(out, parents, bwd)


def gru_step(
    x: Tensor, h: Tensor, Wx: Tensor, Wh: Tensor, bx: Tensor, bh: Tensor
) -> Tensor:
    """One GRU update, fused into a single graph node.

    x: [batch, in], h: [batch, H]; Wx: [in, 3H], Wh: [H, 3H] with columns
    stacked (z | r | n); bx, bh: [3H].
    """
    x, h = as_tensor(x), as_tensor(h)
    H = h.data.shape[-1]
    if Wx.data.shape != (x.data.shape[-1], 3 * H) or Wh.data.shape != (H, 3 * H):
        raise ConfigurationError(
            f"gru_step: weights {Wx.data.shape}/{Wh.data.shape} do not match "
            f"input {x.data.shape} and hidden {h.data.shape}"
        )
    gx = x.data @ Wx.data + bx.data
    gh = h.data @ Wh.data + bh.data
    z = _sigmoid(gx[:, :H] + gh[:, :H])
    r = _sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
    hn = gh[:, 2 * H :]
    n = np.tanh(gx[:, 2 * H :] + r * hn)
    out = (1.0 - z) * h.data + z * n
    parents = (x, h, Wx, Wh, bx, bh)
    if not _track(*parents):
        return Tensor(out)

    def bwd(g):
        dn_pre = g * z * (1.0 - n * n)
        dz_pre = g * (n - h.data) * z * (1.0 - z)
        dr_pre = dn_pre * hn * r * (1.0 - r)
        dgates_x = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
        dgates_h = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
        if x.requires_grad:
            x._accum(dgates_x @ Wx.data.T)
        if h.requires_grad:
            h._accum(g * (1.0 - z) + dgates_h @ Wh.data.T)
        if Wx.requires_grad:
            Wx._accum(x.data.T @ dgates_x)
        if Wh.requires_grad:
            Wh._accum(h.data.T @ dgates_h)
        if bx.requires_grad:
            bx._accum(dgates_x.sum(axis=0))
        if bh.requires_grad:
            bh._accum(dgates_h.sum(axis=0))

    return Tensor._node(out, parents, bwd)


def dropout(x: Tensor, p_drop: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with prob p_drop, scale survivors by 1/(1-p)."""
    if not 0.0 <= p_drop < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {p_drop}")
    x = as_tensor(x)
    if not training or p_drop == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p_drop).astype(x.data.dtype) / (1.0 - p_drop)
    out = x.data * mask
    if not _track(x):
        return Tensor(out)

    def bwd(g):
        x._accum(g * mask)

    return Tensor._node(out, (x,), bwd)


# -- initializers ---------------------------------------------------------


def fanin_uniform(rng: np.random.Generator, fan_in: int, shape, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, dtype=np.float32):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, rmat = np.linalg.qr(a)
    q = q * np.sign(np.diag(rmat))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype)


def gru_weight_init(rng: np.random.Generator, in_dim: int, hidden: int, dtype=np.float32):
    """(Wx, Wh, bx, bh): fan-in uniform input weights, per-gate orthogonal
    recurrent weights, zero biases."""
    Wx = fanin_uniform(rng, in_dim, (in_dim, 3 * hidden), dtype)
    Wh = np.concatenate(
        [orthogonal(rng, hidden, hidden, dtype) for _ in range(3)], axis=1
    )
    bx = np.zeros(3 * hidden, dtype=dtype)
    bh = np.zeros(3 * hidden, dtype=dtype)
    return Wx, Wh, bx, bh


# -- layer classes ---------------------------------------------------------


class Linear:
    """Dense layer whose parameters live in a ParameterStore."""

    def __init__(self, store, name: str, in_dim: int, out_dim: int, rng, act=None):
        dtype = store.dtype
        self.W = store.add(f"{name}.W", fanin_uniform(rng, in_dim, (in_dim, out_dim), dtype))
        self.b = store.add(f"{name}.b", np.zeros(out_dim, dtype=dtype))
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        y = linear(x, self.W, self.b)
        return self.act(y) if self.act is not None else y


class GRUCell:
    def __init__(self, store, name: str, in_dim: int, hidden: int, rng):
        Wx, Wh, bx, bh = gru_weight_init(rng, in_dim, hidden, store.dtype)
        self.Wx = store.add(f"{name}.Wx", Wx)
        self.Wh = store.add(f"{name}.Wh", Wh)
        self.bx = store.add(f"{name}.bx", bx)
        self.bh = store.add(f"{name}.bh", bh)
        self.hidden = hidden

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_step(x, h, self.Wx, self.Wh, self.bx, self.bh)
