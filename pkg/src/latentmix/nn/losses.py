"""Loss functions.  BCE works on logits for numerical stability."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _sigmoid, _track, as_tensor


class InputError(ValueError):
    pass


def _reduce(t: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return t.mean()
    if reduction == "sum":
        return t.sum()
    if reduction == "none":
        return t
    raise ValueError(f"unknown reduction {reduction!r}")


def bce_with_logits(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy from raw logits.

    Per element: max(l, 0) - l*t + log(1 + exp(-|l|)); gradient sigmoid(l) - t.
    """
    logits = as_tensor(logits)
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.data.dtype)
    if t.min() < 0.0 or t.max() > 1.0:
        raise InputError("BCE targets must lie in [0, 1]")
    l = logits.data
    out = np.maximum(l, 0.0) - l * t + np.log1p(np.exp(-np.abs(l)))
    if not _track(logits):
        return _reduce(Tensor(out), reduction)

    def bwd(g):
        logits._accum(g * (_sigmoid(l) - t))

    return _reduce(Tensor._node(out, (logits,), bwd), reduction)


def mse_loss(pred: Tensor, target, reduction: str = "mean") -> Tensor:
    pred = as_tensor(pred)
    target = as_tensor(target)
    d = pred - target.detach()
    return _reduce(d * d, reduction)


def kl_diag_gaussians(mu1, logvar1, mu2, logvar2) -> Tensor:
    """KL( N(mu1, diag exp(logvar1)) || N(mu2, diag exp(logvar2)) ).

    Summed over the trailing (latent) axis, averaged over any leading axes.
    Zero when both distributions coincide.
    """
    from .tensor import exp as texp

    mu1, logvar1 = as_tensor(mu1), as_tensor(logvar1)
    mu2, logvar2 = as_tensor(mu2), as_tensor(logvar2)
    d = mu1 - mu2
    per = 0.5 * (
        logvar2 - logvar1 + texp(logvar1 - logvar2) + d * d * texp(-logvar2) - 1.0
    )
    total = per.sum(axis=-1) if per.ndim > 0 else per
    return total.mean() if total.ndim > 0 else total
