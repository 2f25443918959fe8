"""Variational task-inference machinery: recurrent trajectory encoder
producing per-step Gaussian posteriors over the task embedding m, a
single-head reward decoder with input dropout, a trajectory replay buffer,
and the ELBO update (full-horizon reward reconstruction plus a KL chain
between successive posteriors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    ConfigurationError,
    GRUCell,
    Linear,
    ParameterStore,
    TrainingError,
    bce_with_logits,
    dropout,
    kl_diag_gaussians,
    mse_loss,
    no_grad,
)
from .nn import tensor as tz
from .nn.tensor import Tensor


@dataclass(frozen=True)
class EncoderSizes:
    state_enc: int = 32
    action_enc: int = 0  # 0 feeds the raw one-hot/vector
    reward_enc: int = 8
    gru_hidden: int = 128
    m_dim: int = 32


class EncoderV:
    """Recurrent posterior network q(m | trajectory prefix).

    The posterior at t=0 comes from the output heads applied to the zero
    hidden state; each observed transition (next state, action, reward)
    advances the GRU and yields the next posterior.
    """

    def __init__(self, store: ParameterStore, obs_dim: int, action_feat_dim: int,
                 sizes: EncoderSizes, rng: np.random.Generator, prefix: str = "vae.enc"):
        act = tz.relu
        self.sizes = sizes
        self.state_enc = Linear(store, f"{prefix}.state_enc", obs_dim, sizes.state_enc, rng, act=act)
        if sizes.action_enc > 0:
            self.action_enc = Linear(store, f"{prefix}.action_enc", action_feat_dim,
                                     sizes.action_enc, rng, act=act)
            a_dim = sizes.action_enc
        else:
            self.action_enc = None
            a_dim = action_feat_dim
        self.reward_enc = Linear(store, f"{prefix}.reward_enc", 1, sizes.reward_enc, rng, act=act)
        gru_in = sizes.state_enc + a_dim + sizes.reward_enc
        self.gru = GRUCell(store, f"{prefix}.gru", gru_in, sizes.gru_hidden, rng)
        self.mu_head = Linear(store, f"{prefix}.mu", sizes.gru_hidden, sizes.m_dim, rng)
        self.logvar_head = Linear(store, f"{prefix}.logvar", sizes.gru_hidden, sizes.m_dim, rng)

    @property
    def m_dim(self) -> int:
        return self.sizes.m_dim

    def init_hidden(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.sizes.gru_hidden), dtype=np.float32)

    def _embed(self, next_obs, action_feat, reward) -> Tensor:
        parts = [self.state_enc(tz.as_tensor(next_obs))]
        af = tz.as_tensor(action_feat)
        parts.append(self.action_enc(af) if self.action_enc else af)
        parts.append(self.reward_enc(tz.as_tensor(reward)))
        return tz.concat(parts, axis=1)

    def posterior(self, hidden) -> tuple[Tensor, Tensor]:
        h = tz.as_tensor(hidden)
        return self.mu_head(h), self.logvar_head(h)

    def step(self, next_obs, action_feat, reward, hidden) -> Tensor:
        """Advance the belief by one observed transition; returns new hidden."""
        x = self._embed(next_obs, action_feat, reward)
        return self.gru(x, tz.as_tensor(hidden))

    def step_np(self, next_obs, action_feat, reward, hidden):
        """Rollout fast path: (mu, logvar, hidden') as arrays, no graph."""
        with no_grad():
            h = self.step(next_obs, action_feat, reward, hidden)
            mu, lv = self.posterior(h)
        return mu.data, lv.data, h.data

    def encode_sequence(self, next_obs, action_feat, rewards):
        """Posteriors for a [T, B, ...] slab, zero initial hidden.

        Returns (mu, logvar) Tensors of shape [(T+1)*B, m_dim], rows ordered
        t-major: row t*B + b is the posterior after t transitions of
        trajectory b (t=0 is the learned prior from the zero hidden state).
        """
        T, B = next_obs.shape[0], next_obs.shape[1]
        xs = self._embed(
            Tensor(next_obs.reshape(T * B, -1)),
            Tensor(action_feat.reshape(T * B, -1)),
            Tensor(rewards.reshape(T * B, 1)),
        )
        h = Tensor(self.init_hidden(B))
        states = [h]
        for t in range(T):
            h = self.gru(xs[t * B:(t + 1) * B], h)
            states.append(h)
        stacked = tz.concat(states, axis=0)
        return self.posterior(stacked)


class RewardDecoder:
    """Single-head reward predictor from (m, transition features).

    Dropout hits every non-latent input during training only; eval-mode
    decoding is deterministic so each imaginary task is a fixed MDP within an
    iteration.
    """

    def __init__(self, store: ParameterStore, feat_dim: int, m_dim: int,
                 hidden: tuple[int, int], likelihood: str, p_drop: float,
                 rng: np.random.Generator, prefix: str = "vae.dec"):
        if likelihood not in ("bernoulli", "gaussian"):
            raise ConfigurationError(f"unknown likelihood {likelihood!r}")
        act = tz.relu
        self.likelihood = likelihood
        self.p_drop = p_drop
        self.feat_dim = feat_dim
        self.m_dim = m_dim
        self.fc1 = Linear(store, f"{prefix}.fc1", m_dim + feat_dim, hidden[0], rng, act=act)
        self.fc2 = Linear(store, f"{prefix}.fc2", hidden[0], hidden[1], rng, act=act)
        self.out = Linear(store, f"{prefix}.out", hidden[1], 1, rng)

    def decode(self, m: Tensor, feats: np.ndarray, training: bool,
               rng: np.random.Generator | None) -> Tensor:
        """Graph forward; returns [rows] of logits (bernoulli) or means."""
        f = dropout(Tensor(feats), self.p_drop, training, rng)
        x = tz.concat([tz.as_tensor(m), f], axis=1)
        return self.out(self.fc2(self.fc1(x))).reshape(len(feats))

    def decode_eval(self, m: np.ndarray, feats: np.ndarray) -> np.ndarray:
        """Eval-mode decode; a single latent vector broadcasts over all rows."""
        m = np.asarray(m, dtype=np.float32)
        if m.ndim == 1:
            m = np.broadcast_to(m, (len(feats), m.shape[0]))
        with no_grad():
            out = self.decode(Tensor(np.ascontiguousarray(m)), feats, False, None)
        return out.data.astype(np.float64)


@dataclass
class Trajectory:
    """One worker-iteration of real-environment experience."""

    next_obs: np.ndarray      # [T, obs_dim]
    action_feat: np.ndarray   # [T, action_feat_dim]
    rewards: np.ndarray       # [T]
    dec_feats: np.ndarray     # [T, feat_dim] decoder inputs per transition
    real: bool = True

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Ring buffer of whole trajectories, capacity counted in transitions.

    Mixture-worker experience must never train the decoder, so pushes assert
    the trajectory came from a real environment.
    """

    def __init__(self, capacity_transitions: int):
        self.capacity = int(capacity_transitions)
        self._trajs: list[Trajectory] = []
        self._n_transitions = 0

    def __len__(self) -> int:
        return len(self._trajs)

    @property
    def n_transitions(self) -> int:
        return self._n_transitions

    def push(self, traj: Trajectory):
        if not traj.real:
            raise ConfigurationError("mixture-worker trajectories cannot enter the buffer")
        self._trajs.append(traj)
        self._n_transitions += len(traj)
        while self._n_transitions > self.capacity and len(self._trajs) > 1:
            dropped = self._trajs.pop(0)
            self._n_transitions -= len(dropped)

    def sample(self, k: int, rng: np.random.Generator) -> list[Trajectory]:
        if not self._trajs:
            raise ConfigurationError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._trajs), size=k)
        return [self._trajs[i] for i in idx]


def kl_chain(mu: Tensor, logvar: Tensor, T: int, B: int) -> Tensor:
    """sum_t KL(q_t || q_{t-1}) with q_{-1} = N(0, I), averaged over batch.

    ``mu``/``logvar`` are [(T+1)*B, D] in t-major row order.
    """
    zeros = Tensor(np.zeros((B, mu.shape[1]), dtype=np.float32))
    first = kl_diag_gaussians(mu[:B], logvar[:B], zeros, zeros)
    if T == 0:
        return first
    # gradients flow into both sides of each consecutive pair
    consecutive = kl_diag_gaussians(mu[B:], logvar[B:], mu[:-B], logvar[:-B])
    return first + consecutive * float(T)


def elbo_update(encoder: EncoderV, decoder: RewardDecoder, opt, trajs: list[Trajectory],
                rng_noise: np.random.Generator, rng_dropout: np.random.Generator,
                kl_weight: float = 0.1, n_t_samples: int = 16) -> dict:
    """One VAE step: full-horizon reconstruction from per-step posteriors.

    For each trajectory, posteriors at ``n_t_samples`` random timesteps t are
    sampled and each reconstructs the rewards of all T transitions (past and
    future).  Reconstruction is summed over transitions and averaged over
    (trajectory, t) pairs; the KL chain is summed over t and averaged over
    trajectories.
    """
    B = len(trajs)
    T = len(trajs[0])
    if any(len(tr) != T for tr in trajs):
        raise ConfigurationError("ELBO minibatch trajectories must share one length")
    next_obs = np.stack([tr.next_obs for tr in trajs], axis=1)       # [T, B, obs]
    action_feat = np.stack([tr.action_feat for tr in trajs], axis=1)
    rewards = np.stack([tr.rewards for tr in trajs], axis=1).astype(np.float32)

    mu, logvar = encoder.encode_sequence(next_obs, action_feat, rewards)
    kl = kl_chain(mu, logvar, T, B)

    # the posteriors to reconstruct from: n_t_samples per trajectory
    t_idx = rng_noise.integers(0, T + 1, size=(B, n_t_samples))
    b_idx = np.tile(np.arange(B)[:, None], (1, n_t_samples))
    rows = (t_idx * B + b_idx).reshape(-1)
    mu_sel = mu[rows]
    lv_sel = logvar[rows]
    noise = rng_noise.standard_normal(mu_sel.shape).astype(np.float32)
    m = tz.gaussian_reparameterize(mu_sel, lv_sel, Tensor(noise))

    # expand to every transition of the owning trajectory
    m_rep = m[np.repeat(np.arange(len(rows)), T)]
    feats = np.stack([tr.dec_feats for tr in trajs], axis=0)          # [B, T, F]
    feats_rep = feats[b_idx.reshape(-1)].reshape(-1, feats.shape[-1])
    r_flat = np.stack([tr.rewards for tr in trajs], axis=0)[b_idx.reshape(-1)].reshape(-1)

    out = decoder.decode(m_rep, feats_rep, True, rng_dropout)
    denom = float(B * n_t_samples)
    if decoder.likelihood == "bernoulli":
        targets = (r_flat >= 0.999).astype(np.float32)
        recon = bce_with_logits(out, targets, reduction="sum") * (1.0 / denom)
    else:
        recon = mse_loss(out, r_flat.astype(np.float32), reduction="sum") * (1.0 / denom)

    loss = recon + kl_weight * kl
    if not np.isfinite(float(loss.data)):
        raise TrainingError(f"non-finite ELBO loss {float(loss.data)}")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return {
        "vae_loss": float(loss.data),
        "recon": float(recon.data),
        "kl": float(kl.data),
    }
