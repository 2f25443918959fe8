"""Run orchestration: method wiring, lock-step rollouts of real and
imaginary-task workers, policy and VAE updates, evaluation, and artifacts.

A training iteration rolls all workers forward H*N steps in lock-step.
Normal workers interact with real tasks; mixture workers inherit real
transition dynamics but have their rewards replaced by the decoder's output
on a weighted mixture of the normal workers' current latent beliefs.  One
policy update over all workers' data and (for VAE methods) one ELBO update
from the replay buffer close the iteration.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import GridEnv, GridLayout, PointEnv, PointLayout, load_layout
from .envs import gridworld as gw
from .envs import pointrobot as probot
from .latent import (
    EncoderSizes,
    EncoderV,
    ReplayBuffer,
    RewardDecoder,
    Trajectory,
    elbo_update,
)
from .mixture import imaginary_reward, mix_latents, prob_to_reward, sample_mixture_weights
from .nn import Adam, ConfigurationError, ParameterStore, RMSprop, TrainingError, no_grad, save_checkpoint
from .nn.tensor import Tensor
from .policy import (
    BeliefPolicy,
    PolicyNet,
    PolicySizes,
    RolloutBatch,
    UpdateConfig,
    a2c_update,
    ppo_update,
)

METHODS = (
    "ldm", "rl2", "varibad", "mixreg",
    "ldm_oracle", "rl2_oracle", "varibad_oracle",
    "rl2_dropout", "varibad_dropout", "ldm_shared_encoder",
)

# methods whose workers are all normal (no synthetic-task rows)
_NO_MIXTURE = ("rl2", "rl2_oracle", "rl2_dropout",
               "varibad", "varibad_oracle", "varibad_dropout")
# methods whose policy consumes the shared encoder's posterior instead of
# running its own recurrent core
_BELIEF_POLICY = ("varibad", "varibad_oracle", "varibad_dropout", "ldm_shared_encoder")

ENV_PRESETS = {
    "gridworld": {},
    "pointrobot": dict(
        layout="pointrobot_default",
        action_enc=16, reward_enc=16, belief=128, head=128,
        m_dim=10, dec_hidden=(64, 32), buffer_capacity=10_000,
        p_drop=0.5, beta=2.0,
        frame_budget=2_000_000, eval_every_frames=128_000,
    ),
}

METHOD_PRESETS = {
    "rl2": dict(n_normal=16, n_mixture=0),
    "rl2_oracle": dict(n_normal=16, n_mixture=0),
    "rl2_dropout": dict(n_normal=16, n_mixture=0, obs_p_drop=0.7),
    "varibad": dict(n_normal=16, n_mixture=0, p_drop=0.0),
    "varibad_oracle": dict(n_normal=16, n_mixture=0, p_drop=0.0),
    "varibad_dropout": dict(n_normal=16, n_mixture=0, p_drop=0.7),
}


@dataclass
class RunConfig:
    """Everything one training run needs; defaults are the gridworld setup."""

    env: str = "gridworld"
    layout: str = "gridworld_default"
    method: str = "ldm"
    seed: int = 0
    n_normal: int = 14
    n_mixture: int = 2
    beta: float = 1.0
    p_drop: float = 0.7          # decoder-input dropout
    obs_p_drop: float = 0.0      # policy state-input dropout (ablation baseline)
    frame_budget: int = 4_000_000
    eval_every_frames: int = 192_000
    checkpoint_every_frames: int = 0  # 0: final checkpoint only
    eval_greedy: bool = False
    # policy optimization
    policy_optimizer: str = "adam"   # "adam" | "rmsprop"
    policy_lr: float = 7e-4
    adam_eps: float = 1e-5
    gamma: float = 0.95
    tau: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    episode_terminal_gae: bool = False  # cut advantage chains at within-iteration resets
    ppo_clip: float = 0.1
    ppo_epochs: int = 2
    ppo_minibatches: int = 4
    # network sizes (shared by the policy and the task encoder)
    state_enc: int = 32
    action_enc: int = 0
    reward_enc: int = 8
    gru_hidden: int = 128
    belief: int = 32
    head: int = 32
    # latent dynamics network
    vae_lr: float = 1e-3
    m_dim: int = 32
    dec_hidden: tuple = (32, 32)
    kl_weight: float = 0.1
    n_t_samples: int = 16
    vae_batch: int = 25
    buffer_capacity: int = 100_000
    vae_warmup: int = 1000       # buffer transitions before ELBO updates start
    k_vae: int = 1
    mix_statistic: str = "sample"  # which latent statistic is mixed
    mixture_tasks_independent: bool = True
    imaginary_dropout: bool = False

    @classmethod
    def defaults(cls, env: str = "gridworld", method: str = "ldm", **overrides) -> "RunConfig":
        if env not in ENV_PRESETS:
            raise ConfigurationError(f"unknown environment {env!r}")
        merged = dict(env=env, method=method)
        merged.update(ENV_PRESETS[env])
        merged.update(METHOD_PRESETS.get(method, {}))
        merged.update(overrides)
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    # -- wiring properties --------------------------------------------------

    @property
    def worker_count(self) -> int:
        return self.n_normal + self.n_mixture

    @property
    def uses_vae(self) -> bool:
        return self.method.startswith(("ldm", "varibad"))

    @property
    def belief_policy(self) -> bool:
        return self.method in _BELIEF_POLICY

    @property
    def imaginary(self) -> bool:
        """Mixture workers live in decoder-generated tasks."""
        return self.method.startswith("ldm")

    @property
    def is_mixreg(self) -> bool:
        return self.method == "mixreg"

    @property
    def task_split(self) -> str:
        return "oracle" if self.method.endswith("_oracle") else "train"

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.env not in ENV_PRESETS:
            raise ConfigurationError(f"unknown environment {self.env!r}")
        if self.n_normal < 1:
            raise ConfigurationError("need at least one normal worker")
        if self.n_mixture < 0:
            raise ConfigurationError("mixture worker count cannot be negative")
        if self.method in _NO_MIXTURE and self.n_mixture > 0:
            raise ConfigurationError(f"method {self.method!r} forbids mixture workers")
        if self.method not in _NO_MIXTURE and self.n_mixture < 1:
            raise ConfigurationError(f"method {self.method!r} needs mixture workers")
        if self.is_mixreg and self.env != "gridworld":
            raise ConfigurationError("the mixreg baseline is implemented for the "
                                     "discrete environment only")
        if not 0.0 <= self.p_drop < 1.0 or not 0.0 <= self.obs_p_drop < 1.0:
            raise ConfigurationError("dropout rates must lie in [0, 1)")
        if self.beta <= 0.0:
            raise ConfigurationError("extrapolation level beta must be positive")
        if self.mix_statistic not in ("sample", "mean"):
            raise ConfigurationError(f"unknown mix statistic {self.mix_statistic!r}")
        if self.policy_optimizer not in ("adam", "rmsprop"):
            raise ConfigurationError(f"unknown policy optimizer {self.policy_optimizer!r}")


def rng_streams(seed: int) -> dict:
    """Independent named generators spawned from one seed."""
    names = ("init", "env", "action", "weights", "noise", "dropout", "buffer", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


@dataclass
class Agents:
    store: ParameterStore
    policy: object
    encoder: EncoderV | None
    decoder: RewardDecoder | None
    policy_opt: Adam
    vae_opt: Adam | None
    kind: str  # "discrete" | "continuous"


def _env_shapes(config: RunConfig, layout):
    if isinstance(layout, GridLayout):
        return dict(obs_dim=layout.n_cells, kind="discrete", action_dim=gw.N_ACTIONS,
                    act_feat_dim=gw.N_ACTIONS, dec_feat_dim=layout.n_cells,
                    likelihood="bernoulli")
    return dict(obs_dim=2, kind="continuous", action_dim=2, act_feat_dim=2,
                dec_feat_dim=6, likelihood="gaussian")


def build_agents(config: RunConfig, layout, rng: np.random.Generator) -> Agents:
    shapes = _env_shapes(config, layout)
    store = ParameterStore()
    psizes = PolicySizes(config.state_enc, config.action_enc, config.reward_enc,
                         config.gru_hidden, config.belief, config.head)
    if config.belief_policy:
        policy = BeliefPolicy(store, shapes["obs_dim"], 2 * config.m_dim,
                              shapes["kind"], shapes["action_dim"], psizes, rng)
    else:
        policy = PolicyNet(store, shapes["obs_dim"], shapes["kind"],
                           shapes["action_dim"], psizes, rng)
    encoder = decoder = vae_opt = None
    if config.uses_vae:
        esizes = EncoderSizes(config.state_enc, config.action_enc, config.reward_enc,
                              config.gru_hidden, config.m_dim)
        encoder = EncoderV(store, shapes["obs_dim"], shapes["act_feat_dim"], esizes, rng)
        decoder = RewardDecoder(store, shapes["dec_feat_dim"], config.m_dim,
                                tuple(config.dec_hidden), shapes["likelihood"],
                                config.p_drop, rng)
        vae_params = {n: p for n, p in store.items() if n.startswith("vae.")}
        vae_opt = Adam(vae_params, lr=config.vae_lr, eps=1e-8)
    policy_params = {n: p for n, p in store.items() if n.startswith("policy.")}
    opt_cls = Adam if config.policy_optimizer == "adam" else RMSprop
    policy_opt = opt_cls(policy_params, lr=config.policy_lr, eps=config.adam_eps)
    return Agents(store, policy, encoder, decoder, policy_opt, vae_opt, shapes["kind"])


@dataclass
class TrainState:
    iteration: int
    frames: int
    rngs: dict
    buffer: ReplayBuffer | None
    last_weights: list = field(default_factory=list)  # most recent mixture weights


def mixreg_transform(obs: np.ndarray, rewards: np.ndarray, weights: np.ndarray):
    """Weighted sums of normal workers' observation rows and rewards.

    obs [n, D], rewards [n], weights [k, n] (or [n]) -> ([k, D], [k]).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[None]
    return w @ np.asarray(obs, dtype=np.float64), w @ np.asarray(rewards, dtype=np.float64)


def _imaginary_scalar(decoder: RewardDecoder, m_hat: np.ndarray, feats: np.ndarray,
                      config: RunConfig, rng_dropout) -> float:
    if not config.imaginary_dropout:
        return float(imaginary_reward(decoder, m_hat, feats)[0])
    # optional variant: keep the input dropout active while generating rewards
    m = np.broadcast_to(m_hat.astype(np.float32), (len(feats), len(m_hat)))
    with no_grad():
        out = decoder.decode(Tensor(np.ascontiguousarray(m)), feats, True, rng_dropout)
    val = out.data.astype(np.float64)
    if decoder.likelihood == "bernoulli":
        return float(prob_to_reward(1.0 / (1.0 + np.exp(-val)))[0])
    return float(val[0])


def update_config(config: RunConfig) -> UpdateConfig:
    return UpdateConfig(
        gamma=config.gamma, tau=config.tau, value_coef=config.value_coef,
        entropy_coef=config.entropy_coef, max_grad_norm=config.max_grad_norm,
        episode_terminal_gae=config.episode_terminal_gae,
        ppo_clip=config.ppo_clip, ppo_epochs=config.ppo_epochs,
        ppo_minibatches=config.ppo_minibatches,
    )


def run_iteration(state: TrainState, agents: Agents, config: RunConfig,
                  layout, envs: list) -> dict:
    """One full iteration: rollout, policy update, VAE update. Returns stats."""
    n, k = config.n_normal, config.n_mixture
    W = n + k
    T = layout.steps_per_iteration
    grid = isinstance(layout, GridLayout)
    discrete = agents.kind == "discrete"
    rngs = state.rngs
    policy = agents.policy
    shapes = _env_shapes(config, layout)
    obs_dim, A = shapes["obs_dim"], shapes["act_feat_dim"]
    n_envs = len(envs)

    # -- task + weight sampling (fixed for the whole iteration) ------------
    sample = gw.sample_task if grid else probot.sample_task
    tasks = [sample(layout, config.task_split, rngs["env"]) for _ in range(n)]
    if config.imaginary and k:
        if config.mixture_tasks_independent:
            tasks += [sample(layout, config.task_split, rngs["env"]) for _ in range(k)]
        else:
            tasks += [tasks[j % n] for j in range(k)]
    for env, task in zip(envs, tasks):
        env.reset(task)

    weight_sets = []
    mix_w = dominant = None
    if config.imaginary and k:
        weight_sets = [sample_mixture_weights(n, config.m_dim, config.beta, rngs["weights"])
                       for _ in range(k)]
        state.last_weights = weight_sets
    elif config.is_mixreg and k:
        mix_w = np.stack([sample_mixture_weights(n, 1, config.beta, rngs["weights"])[0]
                          for _ in range(k)])  # [k, n]
        dominant = mix_w.argmax(axis=1)
        state.last_weights = [mix_w]

    # -- rollout storage ----------------------------------------------------
    obs_buf = np.zeros((T, W, obs_dim), np.float32)
    pa_buf = np.zeros((T, W, A), np.float32)
    pr_buf = np.zeros((T, W, 1), np.float32)
    rew_buf = np.zeros((T, W))
    done_buf = np.zeros((T, W))
    logp_buf = np.zeros((T, W))
    val_buf = np.zeros((T, W))
    act_buf = np.zeros((T, W), np.int64) if discrete else np.zeros((T, W, A))
    env_rew = np.zeros((T, n))
    next_buf = np.zeros((T, n, obs_dim), np.float32)
    afeat_buf = np.zeros((T, n, A), np.float32)
    dec_buf = np.zeros((T, n, shapes["dec_feat_dim"]), np.float32)
    bel_buf = np.zeros((T, W, 2 * config.m_dim), np.float32) if config.belief_policy else None

    enc_rows = 0
    if agents.encoder is not None:
        enc_rows = W if config.belief_policy else n
        h_enc = agents.encoder.init_hidden(enc_rows)
        with no_grad():
            mu0, lv0 = agents.encoder.posterior(h_enc)
        mu_cur, lv_cur = mu0.data.copy(), lv0.data.copy()

    h_pol = policy.init_hidden(W)
    pa = np.zeros((W, A), np.float32)
    prb = np.zeros((W, 1), np.float32)
    snaps = []
    chunk = max(1, T // config.ppo_minibatches)

    for t in range(T):
        if config.is_mixreg and k:
            obs_real = np.stack([e.observe() for e in envs])
            mixed_obs, _ = mixreg_transform(obs_real, np.zeros(n), mix_w)
            obs_t = np.concatenate([obs_real, mixed_obs.astype(np.float32)], axis=0)
        else:
            obs_t = np.stack([e.observe() for e in envs])
        obs_buf[t] = obs_t
        pa_buf[t] = pa
        pr_buf[t] = prb
        if config.belief_policy:
            bel = np.concatenate([mu_cur, lv_cur], axis=1).astype(np.float32)
            bel_buf[t] = bel

        if policy.recurrent:
            if not discrete and t % chunk == 0:
                snaps.append(h_pol.copy())
            if discrete:
                a, lp, v, h_pol = policy.act(obs_t, pa, prb, h_pol, rngs["action"])
            else:
                u, sq, lp, v, h_pol = policy.act(obs_t, pa, prb, h_pol, rngs["action"])
        else:
            if discrete:
                a, lp, v = policy.act(obs_t, bel, rngs["action"])
            else:
                u, sq, lp, v = policy.act(obs_t, bel, rngs["action"])

        step_next = np.zeros((n_envs, obs_dim), np.float32)
        step_rew = np.zeros(n_envs)
        for w, env in enumerate(envs):
            if discrete:
                res = env.step(int(a[w]))
                step_next[w] = gw.one_hot(layout, res.next_state)
            else:
                disp = probot.clamp_action(sq[w] * layout.max_speed, layout.max_speed)
                res = env.step(tuple(disp))
                step_next[w] = np.asarray(res.next_state, np.float32)
            step_rew[w] = res.reward
            done_buf[t, w] = float(res.episode_done)
        # synthetic streams follow the same fixed-length episode schedule
        done_buf[t, n_envs:] = done_buf[t, 0]

        if discrete:
            a_feat = np.eye(A, dtype=np.float32)[a]
        else:
            a_feat = sq.astype(np.float32)

        rew_t = np.zeros(W)
        rew_t[:n_envs] = step_rew
        if config.imaginary and k:
            if config.mix_statistic == "sample":
                eps = rngs["noise"].standard_normal(mu_cur[:n].shape).astype(np.float32)
                m_samples = mu_cur[:n] + np.exp(0.5 * lv_cur[:n]) * eps
            else:
                m_samples = mu_cur[:n]
            for j in range(k):
                w_idx = n + j
                if grid:
                    feats = step_next[w_idx][None]
                else:
                    feats = np.concatenate([obs_t[w_idx], a_feat[w_idx],
                                            step_next[w_idx]])[None].astype(np.float32)
                m_hat = mix_latents(m_samples, weight_sets[j])
                rew_t[w_idx] = _imaginary_scalar(agents.decoder, m_hat, feats,
                                                 config, rngs["dropout"])
        elif config.is_mixreg and k:
            _, mixed_r = mixreg_transform(np.zeros((n, 1)), step_rew, mix_w)
            rew_t[n:] = mixed_r
            a_feat = np.concatenate([a_feat[:n],
                                     (mix_w @ a_feat[:n]).astype(np.float32)], axis=0)
            if discrete:
                a = a.copy()
                a[n:] = a[dominant]
            else:
                u = u.copy()
                u[n:] = u[dominant]

        if agents.encoder is not None:
            mu_cur, lv_cur, h_enc = agents.encoder.step_np(
                step_next[:enc_rows], a_feat[:enc_rows],
                rew_t[:enc_rows, None].astype(np.float32), h_enc)

        act_buf[t] = a if discrete else u
        logp_buf[t] = lp
        val_buf[t] = v
        rew_buf[t] = rew_t
        env_rew[t] = step_rew[:n]
        next_buf[t] = step_next[:n]
        afeat_buf[t] = a_feat[:n]
        if grid:
            dec_buf[t] = step_next[:n]
        else:
            dec_buf[t] = np.concatenate([obs_t[:n], a_feat[:n], step_next[:n]], axis=1)
        pa = a_feat.copy()
        prb = rew_t[:, None].astype(np.float32)

    if not np.isfinite(rew_buf).all():
        raise TrainingError(f"non-finite rollout reward at iteration {state.iteration}")

    if state.buffer is not None:
        for i in range(n):
            state.buffer.push(Trajectory(next_buf[:, i], afeat_buf[:, i],
                                         env_rew[:, i].copy(), dec_buf[:, i]))

    batch = RolloutBatch(obs_buf, pa_buf, pr_buf, act_buf, logp_buf, val_buf, rew_buf,
                         episode_done=done_buf,
                         hidden_snaps=np.stack(snaps) if snaps else None,
                         beliefs=bel_buf)
    ucfg = update_config(config)
    if discrete:
        stats = a2c_update(policy, agents.policy_opt, batch, ucfg)
    else:
        stats = ppo_update(policy, agents.policy_opt, batch, ucfg)

    vae_stats = {"vae_loss": 0.0, "recon": 0.0, "kl": 0.0}
    if (agents.encoder is not None
            and state.buffer.n_transitions >= config.vae_warmup):
        for _ in range(config.k_vae):
            trajs = state.buffer.sample(config.vae_batch, rngs["buffer"])
            vae_stats = elbo_update(agents.encoder, agents.decoder, agents.vae_opt,
                                    trajs, rngs["noise"], rngs["dropout"],
                                    kl_weight=config.kl_weight,
                                    n_t_samples=config.n_t_samples)

    H = layout.H
    out = {
        "rollout_return": float(env_rew.sum(axis=0).mean()),
        "rollout_return_epN": float(env_rew[-H:].sum(axis=0).mean()),
        "imaginary_reward_mean": float(rew_buf[:, n:].mean()) if k else 0.0,
    }
    out.update({k2: float(v2) for k2, v2 in stats.items()})
    out.setdefault("clip_frac", 0.0)
    out.update(vae_stats)
    return out


def _point_eval_tasks(layout: PointLayout, split: str):
    if split in ("test", "eval"):
        return probot.eval_tasks(layout)
    # deterministic train probes: interval midpoints at the four axes
    tasks = []
    angles = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)
    for lo, hi in layout.radii("train"):
        r = 0.5 * (lo + hi)
        if r == 0.0:
            r = 0.5 * hi
        for th in angles:
            tasks.append(probot.TaskSpec(kind="pointrobot",
                                         goal=(r * np.cos(th), r * np.sin(th)),
                                         split="train"))
    return tasks


def evaluate_agents(agents: Agents, config: RunConfig, layout, split: str,
                    rng: np.random.Generator, greedy: bool = False) -> dict:
    """Roll every task of a split for one iteration; per-episode returns.

    Gridworld splits enumerate the layout's goal cells; the point robot uses
    fixed probe goals.  'failed' counts tasks that never touch the goal
    (gridworld) or never beat the stay-at-origin return (point robot).
    """
    grid = isinstance(layout, GridLayout)
    if grid:
        tasks = [gw.TaskSpec("gridworld", g, layout.split_of(g))
                 for g in layout.goals(split)]
    else:
        tasks = _point_eval_tasks(layout, split)
    B = len(tasks)
    T, H, N = layout.steps_per_iteration, layout.H, layout.N
    policy = agents.policy
    discrete = agents.kind == "discrete"
    envs = [(GridEnv(layout) if grid else PointEnv(layout)) for _ in range(B)]
    for env, task in zip(envs, tasks):
        env.reset(task)

    drop_was = getattr(policy, "obs_drop_training", False)
    if drop_was:
        policy.obs_drop_training = False
    try:
        if agents.encoder is not None and config.belief_policy:
            h_enc = agents.encoder.init_hidden(B)
            with no_grad():
                mu0, lv0 = agents.encoder.posterior(h_enc)
            mu_cur, lv_cur = mu0.data.copy(), lv0.data.copy()
        A = policy.action_dim
        h_pol = policy.init_hidden(B)
        pa = np.zeros((B, A), np.float32)
        prb = np.zeros((B, 1), np.float32)
        rewards = np.zeros((T, B))
        reached = np.zeros(B, dtype=bool)
        for t in range(T):
            obs_t = np.stack([e.observe() for e in envs])
            if policy.recurrent:
                if discrete:
                    a, _, _, h_pol = policy.act(obs_t, pa, prb, h_pol, rng, greedy=greedy)
                else:
                    u, sq, _, _, h_pol = policy.act(obs_t, pa, prb, h_pol, rng, greedy=greedy)
            else:
                bel = np.concatenate([mu_cur, lv_cur], axis=1).astype(np.float32)
                if discrete:
                    a, _, _ = policy.act(obs_t, bel, rng, greedy=greedy)
                else:
                    u, sq, _, _ = policy.act(obs_t, bel, rng, greedy=greedy)
            step_next = np.zeros((B, obs_t.shape[1]), np.float32)
            for w, env in enumerate(envs):
                if discrete:
                    res = env.step(int(a[w]))
                    step_next[w] = gw.one_hot(layout, res.next_state)
                    if res.next_state == tasks[w].goal:
                        reached[w] = True
                else:
                    disp = probot.clamp_action(sq[w] * layout.max_speed, layout.max_speed)
                    res = env.step(tuple(disp))
                    step_next[w] = np.asarray(res.next_state, np.float32)
                rewards[t, w] = res.reward
            a_feat = np.eye(A, dtype=np.float32)[a] if discrete else sq.astype(np.float32)
            if agents.encoder is not None and config.belief_policy:
                mu_cur, lv_cur, h_enc = agents.encoder.step_np(
                    step_next, a_feat, rewards[t][:, None].astype(np.float32), h_enc)
            pa = a_feat
            prb = rewards[t][:, None].astype(np.float32)
    finally:
        if drop_was:
            policy.obs_drop_training = True

    per_episode = rewards.reshape(N, H, B).sum(axis=1)  # [N, B]
    if not grid:
        floor = np.array([probot.stay_at_origin_return(layout, tk) for tk in tasks])
        reached = per_episode[-1] > floor
    return {
        "goals": [t.goal for t in tasks],
        "splits": [t.split for t in tasks],
        "returns": per_episode.T.copy(),          # [B, N]
        "reached": reached,
        "mean_ep1": float(per_episode[0].mean()),
        "mean_epN": float(per_episode[-1].mean()),
        "failed": int((~reached).sum()),
    }


METRIC_COLUMNS = (
    "frames", "iteration",
    "train_return_ep1", "train_return_epN", "train_failed",
    "test_return_ep1", "test_return_epN", "test_failed",
    "rollout_return", "rollout_return_epN", "imaginary_reward_mean",
    "loss", "policy_loss", "value_loss", "entropy", "grad_norm", "clip_frac",
    "vae_loss", "recon", "kl",
)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def run_training(config: RunConfig, out_dir: str) -> dict:
    """Train to the frame budget; emits metrics.csv, config.json, checkpoints."""
    config.validate()
    layout = load_layout(config.layout)
    grid = isinstance(layout, GridLayout)
    if grid != (config.env == "gridworld"):
        raise ConfigurationError(
            f"layout {config.layout!r} does not match environment {config.env!r}")
    streams = rng_streams(config.seed)
    agents = build_agents(config, layout, streams["init"])
    if config.obs_p_drop > 0.0:
        agents.policy.set_obs_dropout(config.obs_p_drop, streams["dropout"])
    n_envs = config.n_normal + (config.n_mixture if config.imaginary else 0)
    envs = [(GridEnv(layout) if grid else PointEnv(layout)) for _ in range(n_envs)]
    buffer = ReplayBuffer(config.buffer_capacity) if config.uses_vae else None
    state = TrainState(iteration=0, frames=0, rngs=streams, buffer=buffer)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(asdict(config), f, indent=2, sort_keys=True, default=list)

    frames_per_iter = config.worker_count * layout.steps_per_iteration
    metrics_path = os.path.join(out_dir, "metrics.csv")
    last = {}

    def eval_row(mf):
        ev_tr = evaluate_agents(agents, config, layout, "train", streams["eval"],
                                greedy=config.eval_greedy)
        ev_te = evaluate_agents(agents, config, layout, "test", streams["eval"],
                                greedy=config.eval_greedy)
        row = {
            "frames": state.frames, "iteration": state.iteration,
            "train_return_ep1": ev_tr["mean_ep1"], "train_return_epN": ev_tr["mean_epN"],
            "train_failed": ev_tr["failed"],
            "test_return_ep1": ev_te["mean_ep1"], "test_return_epN": ev_te["mean_epN"],
            "test_failed": ev_te["failed"],
        }
        for c in METRIC_COLUMNS[8:]:
            row[c] = last.get(c, 0.0)
        mf.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")
        mf.flush()

    next_eval = 0
    next_ckpt = config.checkpoint_every_frames or None
    with open(metrics_path, "w") as mf:
        mf.write(",".join(METRIC_COLUMNS) + "\n")
        while state.frames < config.frame_budget:
            if state.frames >= next_eval:
                eval_row(mf)
                next_eval = state.frames + config.eval_every_frames
            if next_ckpt is not None and state.frames >= next_ckpt:
                save_checkpoint(os.path.join(out_dir, f"checkpoint_{state.frames}.ck"),
                                agents.store.arrays())
                next_ckpt = state.frames + config.checkpoint_every_frames
            last = run_iteration(state, agents, config, layout, envs)
            state.iteration += 1
            state.frames += frames_per_iter
        eval_row(mf)

    final_path = os.path.join(out_dir, "checkpoint_final.ck")
    save_checkpoint(final_path, agents.store.arrays())
    return {
        "metrics": metrics_path,
        "checkpoint": final_path,
        "frames": state.frames,
        "iterations": state.iteration,
    }
