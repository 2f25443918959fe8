"""Recurrent belief-conditioned policy and its on-policy updates.

The net embeds (observation, previous action, previous reward), runs one GRU
whose hidden state persists across the N episodes of an iteration, projects to
a belief vector b_t, and reads action distribution and value off b_t.  A2C
with GAE trains the discrete-control variant, clipped PPO the continuous one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Adam, GRUCell, Linear, ParameterStore, TrainingError, no_grad
from .nn import tensor as tz
from .nn.layers import dropout
from .nn.tensor import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PolicySizes:
    state_enc: int = 32
    action_enc: int = 0  # 0 feeds the raw one-hot/vector without a layer
    reward_enc: int = 8
    gru_hidden: int = 128
    belief: int = 32
    head: int = 32


@dataclass
class RolloutBatch:
    """One iteration of lock-step worker data, time-major [T, W, ...]."""

    obs: np.ndarray
    prev_action_feat: np.ndarray
    prev_reward: np.ndarray
    actions: np.ndarray  # [T, W] ints (discrete) or [T, W, D] pre-squash (continuous)
    logprobs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    episode_done: np.ndarray | None = None  # [T, W] 1.0 where a step ends an episode
    hidden_snaps: np.ndarray | None = None  # [n_chunks, W, hid] for PPO replay
    beliefs: np.ndarray | None = None  # [T, W, 2*m_dim] for belief-input policies

    @property
    def T(self) -> int:
        return self.obs.shape[0]

    @property
    def W(self) -> int:
        return self.obs.shape[1]


class PolicyNet:
    recurrent = True

    def __init__(self, store: ParameterStore, obs_dim: int, action_kind: str,
                 action_dim: int, sizes: PolicySizes, rng: np.random.Generator,
                 prefix: str = "policy"):
        if action_kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {action_kind!r}")
        self.kind = action_kind
        self.action_dim = action_dim
        self.sizes = sizes
        # state-input dropout (off by default; a regularization baseline)
        self.obs_drop_p = 0.0
        self.obs_drop_rng: np.random.Generator | None = None
        self.obs_drop_training = False
        act = tz.tanh
        self.state_enc = Linear(store, f"{prefix}.state_enc", obs_dim, sizes.state_enc, rng, act=act)
        feat_dim = action_dim  # one-hot width (discrete) or vector width
        if sizes.action_enc > 0:
            self.action_enc = Linear(store, f"{prefix}.action_enc", feat_dim, sizes.action_enc, rng, act=act)
            a_dim = sizes.action_enc
        else:
            self.action_enc = None
            a_dim = feat_dim
        self.reward_enc = Linear(store, f"{prefix}.reward_enc", 1, sizes.reward_enc, rng, act=act)
        gru_in = sizes.state_enc + a_dim + sizes.reward_enc
        self.gru = GRUCell(store, f"{prefix}.gru", gru_in, sizes.gru_hidden, rng)
        self.belief = Linear(store, f"{prefix}.belief", sizes.gru_hidden, sizes.belief, rng, act=act)
        self.pi_fc = Linear(store, f"{prefix}.pi.fc", sizes.belief, sizes.head, rng, act=act)
        self.pi_out = Linear(store, f"{prefix}.pi.out", sizes.head, action_dim, rng)
        self.pi_out.W.data *= 0.01  # start near uniform / near-zero mean
        self.v_fc = Linear(store, f"{prefix}.v.fc", sizes.belief, sizes.head, rng, act=act)
        self.v_out = Linear(store, f"{prefix}.v.out", sizes.head, 1, rng)
        if action_kind == "continuous":
            # state-independent log-std, initialized to 0
            self.log_std = store.add(f"{prefix}.pi.log_std", np.zeros(action_dim, dtype=store.dtype))
        else:
            self.log_std = None

    # -- forward ----------------------------------------------------------

    def init_hidden(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.sizes.gru_hidden), dtype=np.float32)

    def action_feat_dim(self) -> int:
        return self.action_dim

    def set_obs_dropout(self, p: float, rng: np.random.Generator | None):
        self.obs_drop_p = float(p)
        self.obs_drop_rng = rng
        self.obs_drop_training = p > 0.0 and rng is not None

    def _embed(self, obs: Tensor, prev_feat: Tensor, prev_reward: Tensor) -> Tensor:
        if self.obs_drop_p > 0.0 and self.obs_drop_training:
            obs = dropout(obs, self.obs_drop_p, True, self.obs_drop_rng)
        parts = [self.state_enc(obs)]
        parts.append(self.action_enc(prev_feat) if self.action_enc else prev_feat)
        parts.append(self.reward_enc(prev_reward))
        return tz.concat(parts, axis=1)

    def _heads(self, hidden: Tensor) -> tuple[Tensor, Tensor]:
        b = self.belief(hidden)
        dist = self.pi_out(self.pi_fc(b))
        value = self.v_out(self.v_fc(b))
        return dist, value

    def step(self, obs, prev_feat, prev_reward, hidden):
        """One graph-building forward step; inputs are arrays or Tensors."""
        x = self._embed(tz.as_tensor(obs), tz.as_tensor(prev_feat), tz.as_tensor(prev_reward))
        h = self.gru(x, tz.as_tensor(hidden))
        dist, value = self._heads(h)
        return dist, value, h

    def unroll(self, obs, prev_feat, prev_reward, h0):
        """Graph forward over a [T, W, ...] slab from initial hidden h0.

        Embeds all T*W rows in one fused node, steps the GRU T times, then
        runs the heads once over the stacked hidden states.  Returns
        (dist [T*W, A], values [T*W], last hidden Tensor).
        """
        T, W = obs.shape[0], obs.shape[1]
        xs = self._embed(
            Tensor(obs.reshape(T * W, -1)),
            Tensor(prev_feat.reshape(T * W, -1)),
            Tensor(prev_reward.reshape(T * W, 1)),
        )
        h = tz.as_tensor(h0)
        states = []
        for t in range(T):
            h = self.gru(xs[t * W:(t + 1) * W], h)
            states.append(h)
        stacked = tz.concat(states, axis=0)
        dist, value = self._heads(stacked)
        return dist, value.reshape(T * W), h

    def act(self, obs, prev_feat, prev_reward, hidden, rng: np.random.Generator,
            greedy: bool = False):
        """Rollout-time forward without graph building.

        Discrete: returns (actions [W] int, logprob [W], value [W], hidden').
        Continuous: returns (u [W, D] pre-squash, squashed tanh(u), logprob,
        value, hidden').
        """
        with no_grad():
            dist, value, h = self.step(obs, prev_feat, prev_reward, hidden)
        v = value.data[:, 0].astype(np.float64)
        if self.kind == "discrete":
            a, lp = _sample_discrete(dist.data, rng, greedy)
            return a, lp, v, h.data
        u, sq, lp = _sample_gaussian(dist.data, self.log_std.data, rng, greedy)
        return u, sq, lp, v, h.data


class BeliefPolicy:
    """Feedforward policy over (observation, externally supplied belief).

    Methods that share the task-inference encoder with the policy route its
    posterior statistics in as a plain input stream; the policy loss never
    backpropagates into whatever produced them.
    """

    recurrent = False

    def __init__(self, store: ParameterStore, obs_dim: int, belief_dim: int,
                 action_kind: str, action_dim: int, sizes: PolicySizes,
                 rng: np.random.Generator, prefix: str = "policy"):
        if action_kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {action_kind!r}")
        self.kind = action_kind
        self.action_dim = action_dim
        self.sizes = sizes
        act = tz.tanh
        self.state_enc = Linear(store, f"{prefix}.state_enc", obs_dim, sizes.state_enc, rng, act=act)
        self.trunk = Linear(store, f"{prefix}.trunk", sizes.state_enc + belief_dim,
                            sizes.belief, rng, act=act)
        self.pi_fc = Linear(store, f"{prefix}.pi.fc", sizes.belief, sizes.head, rng, act=act)
        self.pi_out = Linear(store, f"{prefix}.pi.out", sizes.head, action_dim, rng)
        self.pi_out.W.data *= 0.01
        self.v_fc = Linear(store, f"{prefix}.v.fc", sizes.belief, sizes.head, rng, act=act)
        self.v_out = Linear(store, f"{prefix}.v.out", sizes.head, 1, rng)
        if action_kind == "continuous":
            self.log_std = store.add(f"{prefix}.pi.log_std", np.zeros(action_dim, dtype=store.dtype))
        else:
            self.log_std = None

    def init_hidden(self, batch: int) -> np.ndarray:
        # stateless; zero-width array keeps the rollout plumbing uniform
        return np.zeros((batch, 0), dtype=np.float32)

    def forward_rows(self, obs, beliefs) -> tuple[Tensor, Tensor]:
        x = tz.concat([self.state_enc(tz.as_tensor(obs)), tz.as_tensor(beliefs)], axis=1)
        b = self.trunk(x)
        dist = self.pi_out(self.pi_fc(b))
        value = self.v_out(self.v_fc(b))
        return dist, value.reshape(len(obs))

    def act(self, obs, beliefs, rng: np.random.Generator, greedy: bool = False):
        with no_grad():
            dist, value = self.forward_rows(obs, beliefs)
        v = value.data.astype(np.float64)
        if self.kind == "discrete":
            a, lp = _sample_discrete(dist.data, rng, greedy)
            return a, lp, v
        u, sq, lp = _sample_gaussian(dist.data, self.log_std.data, rng, greedy)
        return u, sq, lp, v


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _sample_discrete(logits: np.ndarray, rng: np.random.Generator, greedy: bool):
    logp_all = _log_softmax_np(logits)
    if greedy:
        a = np.argmax(logp_all, axis=1)
    else:
        cdf = np.cumsum(np.exp(logp_all), axis=1)
        u = rng.random((len(cdf), 1))
        a = (u >= cdf).sum(axis=1)
        a = np.minimum(a, logp_all.shape[1] - 1)
    lp = logp_all[np.arange(len(a)), a]
    return a.astype(np.int64), lp


def _sample_gaussian(mean: np.ndarray, log_std: np.ndarray,
                     rng: np.random.Generator, greedy: bool):
    mean = mean.astype(np.float64)
    log_std = log_std.astype(np.float64)
    u = mean if greedy else mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    lp = _gaussian_logp_np(u, mean, log_std)
    return u, np.tanh(u), lp


def _gaussian_logp_np(u, mean, log_std) -> np.ndarray:
    z = (u - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=1) - log_std.sum() - 0.5 * LOG_2PI * u.shape[1]


def gaussian_logp(u: np.ndarray, mean: Tensor, log_std: Tensor) -> Tensor:
    """Graph log-density of fixed samples u under N(mean, exp(log_std)^2)."""
    diff = (Tensor(u) - mean) * tz.exp(-1.0 * log_std)
    quad = tz.sum_(diff * diff, axis=1)
    const = 0.5 * LOG_2PI * u.shape[1]
    return -0.5 * quad - tz.sum_(log_std) - const


def gae(rewards: np.ndarray, values: np.ndarray, bootstrap, gamma: float = 0.95,
        tau: float = 0.95, episode_done=None) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over [T] or [T, W] arrays.

    A_t = delta_t + gamma*tau*A_{t+1}, delta_t = r_t + gamma*V_{t+1} - V_t,
    with V_T = bootstrap (0 at an iteration end).  Steps flagged in
    episode_done are terminal: the bootstrap and the advantage chain are
    zeroed across them, so each episode forms its own credit segment (the
    recurrent belief still persists; only return targets are cut).  Returns
    (advantages, returns = advantages + values) in float64.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(v)
    next_v = np.asarray(bootstrap, dtype=np.float64)
    acc = np.zeros_like(next_v)
    cont = None
    if episode_done is not None:
        cont = 1.0 - np.asarray(episode_done, dtype=np.float64)
    for t in range(r.shape[0] - 1, -1, -1):
        if cont is not None:
            next_v = next_v * cont[t]
            acc = acc * cont[t]
        delta = r[t] + gamma * next_v - v[t]
        acc = delta + gamma * tau * acc
        adv[t] = acc
        next_v = v[t]
    return adv, adv + v


def standardize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - x.mean()) / (x.std() + eps)


def entropy_categorical(logp: Tensor) -> Tensor:
    """Mean entropy of rows of log-probabilities."""
    return tz.mean(tz.sum_(tz.exp(logp) * logp, axis=1)) * -1.0


def clipped_surrogate(ratio: Tensor, adv: np.ndarray, clip: float) -> Tensor:
    """Per-element PPO objective min(ratio*A, clip(ratio)*A) (to maximize)."""
    a = Tensor(adv)
    return tz.minimum(ratio * a, tz.clip(ratio, 1.0 - clip, 1.0 + clip) * a)


@dataclass
class UpdateConfig:
    gamma: float = 0.95
    tau: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    standardize_adv: bool = True
    episode_terminal_gae: bool = False  # cut advantage chains at episode resets
    ppo_clip: float = 0.1
    ppo_epochs: int = 2
    ppo_minibatches: int = 4


def a2c_update(net, opt: Adam, batch: RolloutBatch, cfg: UpdateConfig) -> dict:
    """One synchronous A2C step over a full iteration of worker data."""
    T, W = batch.T, batch.W
    mask = batch.episode_done if cfg.episode_terminal_gae else None
    adv, returns = gae(batch.rewards, batch.values, np.zeros(W), cfg.gamma, cfg.tau, mask)
    pg_adv = standardize(adv) if cfg.standardize_adv else adv
    if net.recurrent:
        h0 = net.init_hidden(W)
        logits, values, _ = net.unroll(batch.obs, batch.prev_action_feat, batch.prev_reward, h0)
    else:
        if batch.beliefs is None:
            raise TrainingError("belief-input policy update needs batch.beliefs")
        logits, values = net.forward_rows(batch.obs.reshape(T * W, -1),
                                          batch.beliefs.reshape(T * W, -1))
    logp = tz.log_softmax(logits, axis=1)
    idx = (np.arange(T * W), batch.actions.reshape(T * W))
    chosen = logp[idx]
    policy_loss = -1.0 * tz.mean(chosen * Tensor(pg_adv.reshape(T * W).astype(np.float32)))
    value_err = values - Tensor(returns.reshape(T * W).astype(np.float32))
    value_loss = tz.mean(value_err * value_err)
    entropy = entropy_categorical(logp)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not np.isfinite(float(loss.data)):
        raise TrainingError(f"non-finite A2C loss {float(loss.data)}")
    opt.zero_grad()
    loss.backward()
    grad_norm = opt.clip_and_step(cfg.max_grad_norm)
    return {
        "loss": float(loss.data),
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "grad_norm": grad_norm,
    }


def ppo_update(net, opt: Adam, batch: RolloutBatch, cfg: UpdateConfig) -> dict:
    """Clipped-surrogate PPO over time-chunk minibatches with stored hidden
    replay."""
    T, W = batch.T, batch.W
    n_chunks = cfg.ppo_minibatches
    if T % n_chunks != 0:
        raise TrainingError(f"iteration length {T} not divisible into {n_chunks} chunks")
    if net.recurrent and (batch.hidden_snaps is None
                          or batch.hidden_snaps.shape[0] != n_chunks):
        raise TrainingError("PPO needs one stored hidden snapshot per minibatch chunk")
    if not net.recurrent and batch.beliefs is None:
        raise TrainingError("belief-input policy update needs batch.beliefs")
    chunk = T // n_chunks
    mask = batch.episode_done if cfg.episode_terminal_gae else None
    adv, returns = gae(batch.rewards, batch.values, np.zeros(W), cfg.gamma, cfg.tau, mask)
    pg_adv = standardize(adv) if cfg.standardize_adv else adv
    stats = {"loss": 0.0, "policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "grad_norm": 0.0, "clip_frac": 0.0}
    n_steps = 0
    for _ in range(cfg.ppo_epochs):
        for c in range(n_chunks):
            lo, hi = c * chunk, (c + 1) * chunk
            rows = chunk * W
            if net.recurrent:
                mean, values, _ = net.unroll(
                    batch.obs[lo:hi], batch.prev_action_feat[lo:hi],
                    batch.prev_reward[lo:hi], batch.hidden_snaps[c],
                )
            else:
                mean, values = net.forward_rows(
                    batch.obs[lo:hi].reshape(rows, -1),
                    batch.beliefs[lo:hi].reshape(rows, -1),
                )
            u = batch.actions[lo:hi].reshape(rows, -1).astype(np.float32)
            logp_new = gaussian_logp(u, mean, net.log_std)
            logp_old = batch.logprobs[lo:hi].reshape(rows).astype(np.float32)
            ratio = tz.exp(logp_new - Tensor(logp_old))
            adv_c = pg_adv[lo:hi].reshape(rows).astype(np.float32)
            surr = clipped_surrogate(ratio, adv_c, cfg.ppo_clip)
            policy_loss = -1.0 * tz.mean(surr)
            value_err = values - Tensor(returns[lo:hi].reshape(rows).astype(np.float32))
            value_loss = tz.mean(value_err * value_err)
            # pre-squash Gaussian entropy: 0.5*log(2*pi*e) + log_std per dim
            entropy = tz.sum_(net.log_std) + 0.5 * (LOG_2PI + 1.0) * net.action_dim
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
            if not np.isfinite(float(loss.data)):
                raise TrainingError(f"non-finite PPO loss {float(loss.data)}")
            opt.zero_grad()
            loss.backward()
            grad_norm = opt.clip_and_step(cfg.max_grad_norm)
            stats["loss"] += float(loss.data)
            stats["policy_loss"] += float(policy_loss.data)
            stats["value_loss"] += float(value_loss.data)
            stats["entropy"] += float(entropy.data)
            stats["grad_norm"] += grad_norm
            stats["clip_frac"] += float(np.mean(np.abs(ratio.data - 1.0) > cfg.ppo_clip))
            n_steps += 1
    for k in stats:
        stats[k] /= n_steps
    return stats
