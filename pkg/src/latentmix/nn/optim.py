"""Adam optimizer and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingError(RuntimeError):
    """Raised when training hits non-finite gradients or losses."""


def clip_global_norm(grads, max_norm: float):
    """Scale all gradients in place so their global L2 norm is <= max_norm.

    Returns the pre-clip norm.  Never increases any gradient's magnitude.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        seen = set()
        for g in grads:
            # passthrough backward ops can hand the same buffer to two
            # parameters; scale each buffer once
            if g is not None and id(g) not in seen:
                seen.add(id(g))
                np.multiply(g, scale, out=g)
    return norm


class Adam:
    """Adam with bias correction; epsilon sits inside the denominator."""

    def __init__(self, params: dict[str, Tensor], lr: float, eps: float = 1e-5,
                 betas=(0.9, 0.999)):
        self.params = dict(params)
        self.lr = lr
        self.eps = eps
        self.beta1, self.beta2 = betas
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2, t = self.beta1, self.beta2, self.step_count
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            np.add(b1 * m, (1.0 - b1) * g, out=m)
            np.add(b2 * v, (1.0 - b2) * (g * g), out=v)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def clip_and_step(self, max_norm: float) -> float:
        norm = clip_global_norm([p.grad for p in self.params.values()], max_norm)
        self.step()
        return norm

    # -- checkpoint support -------------------------------------------------

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([self.step_count], dtype=np.float64)}
        for n in self.params:
            out[f"{prefix}.m.{n}"] = self.m[n]
            out[f"{prefix}.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]):
        self.step_count = int(arrays[f"{prefix}.step"][0])
        for n in self.params:
            self.m[n] = arrays[f"{prefix}.m.{n}"].astype(self.m[n].dtype).reshape(self.m[n].shape)
            self.v[n] = arrays[f"{prefix}.v.{n}"].astype(self.v[n].dtype).reshape(self.v[n].shape)


class RMSprop:
    """Plain RMSprop (no momentum, uncentered); epsilon added outside the
    root.  The classic A2C optimizer; sometimes steadier than Adam for
    on-policy gradients because the second moment forgets faster and there
    is no momentum mixing in stale policy directions."""

    def __init__(self, params: dict[str, Tensor], lr: float, eps: float = 1e-5,
                 alpha: float = 0.99):
        self.params = dict(params)
        self.lr = lr
        self.eps = eps
        self.alpha = alpha
        self.step_count = 0
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        a = self.alpha
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            v = self.v[name]
            np.add(a * v, (1.0 - a) * (g * g), out=v)
            p.data = p.data - self.lr * g / (np.sqrt(v) + self.eps)

    def clip_and_step(self, max_norm: float) -> float:
        norm = clip_global_norm([p.grad for p in self.params.values()], max_norm)
        self.step()
        return norm

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([self.step_count], dtype=np.float64)}
        for n in self.params:
            out[f"{prefix}.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]):
        self.step_count = int(arrays[f"{prefix}.step"][0])
        for n in self.params:
            self.v[n] = arrays[f"{prefix}.v.{n}"].astype(self.v[n].dtype).reshape(self.v[n].shape)
