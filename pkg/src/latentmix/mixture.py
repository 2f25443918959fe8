"""Mixture-weight sampling, per-dimension latent mixing, and the mapping
from decoder outputs to imaginary rewards.

Weights follow the shifted Dirichlet rule: alpha ~ beta * Dirichlet(1,...,1)
- (beta - 1)/n, drawn independently for every latent dimension and held fixed
for a whole iteration.  Sums stay exactly 1 per dimension for any beta; beta=1
gives convex combinations, beta>1 allows extrapolation outside [0, 1].
"""

from __future__ import annotations

import numpy as np

from .nn import ConfigurationError


def sample_mixture_weights(n: int, dim: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Weights of shape [dim, n]; row d mixes dimension d across the n workers."""
    if n < 1 or dim < 1:
        raise ConfigurationError(f"need n >= 1 and dim >= 1, got n={n} dim={dim}")
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    # Dirichlet(1,...,1) via normalized unit-rate exponentials
    e = rng.exponential(1.0, size=(dim, n))
    simplex = e / e.sum(axis=1, keepdims=True)
    return beta * simplex - (beta - 1.0) / n


def weight_bounds(n: int, beta: float) -> tuple[float, float]:
    lo = -(beta - 1.0) / n
    return lo, beta + lo


def mean_weights_per_worker(weights: np.ndarray) -> np.ndarray:
    """Per-worker weight summary: mean over latent dimensions."""
    return np.asarray(weights).mean(axis=0)


def mix_latents(latents: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """m_hat[d] = sum_i weights[d, i] * latents[i, d]."""
    latents = np.asarray(latents)
    weights = np.asarray(weights)
    if latents.ndim != 2 or weights.ndim != 2 or weights.shape != (latents.shape[1], latents.shape[0]):
        raise ValueError(
            f"latents [n, D] and weights [D, n] disagree: {latents.shape} vs {weights.shape}"
        )
    return np.einsum("dn,nd->d", weights, latents)


def prob_to_reward(p):
    """Map decoder goal probability back to the gridworld reward scale:
    p=1 -> +1.0, p=0 -> -0.1."""
    return 1.1 * np.asarray(p) - 0.1


def imaginary_reward(decoder, m_hat: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Rewards a mixture worker receives in place of the environment's.

    ``decoder`` runs in eval mode (no dropout), so within one iteration the
    same (weights, parameters, transition) always yields the same reward.
    ``inputs`` holds the decoder's non-latent features for one or more queried
    transitions, shape [batch, feat].
    """
    out = decoder.decode_eval(m_hat, inputs)
    if decoder.likelihood == "bernoulli":
        return prob_to_reward(1.0 / (1.0 + np.exp(-out)))
    return out
