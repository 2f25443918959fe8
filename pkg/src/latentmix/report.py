"""Evaluation harness and figure-data emitters.

Everything here is read-only over training artifacts: a run directory with
config.json and checkpoint files is rebuilt into frozen agents, rolled out,
and summarized into CSV (canonical), PGM (bit-exact grayscale), and SVG
(human viewing) files.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .envs import GridLayout, load_layout
from .envs import gridworld as gw
from .mixture import imaginary_reward, mean_weights_per_worker, mix_latents, sample_mixture_weights
from .nn import ConfigurationError, load_checkpoint, no_grad
from .trainer import Agents, RunConfig, build_agents, evaluate_agents


@dataclass
class EvalResult:
    """Per-task rollout summary for one checkpoint and one split."""

    goals: list
    splits: list
    returns: np.ndarray          # [n_tasks, N] per-episode returns
    reached: np.ndarray          # [n_tasks] bool, goal ever occupied
    mean_ep1: float
    mean_epN: float
    failed: int

    @property
    def n_tasks(self) -> int:
        return len(self.goals)


def load_run(run_dir: str, checkpoint: str = "checkpoint_final.ck"):
    """Rebuild frozen agents from a run directory's config and checkpoint."""
    cfg_path = os.path.join(run_dir, "config.json")
    if not os.path.isfile(cfg_path):
        raise ConfigurationError(f"{run_dir}: no config.json")
    with open(cfg_path) as f:
        raw = json.load(f)
    raw["dec_hidden"] = tuple(raw.get("dec_hidden", ()))
    config = RunConfig(**raw)
    config.validate()
    layout = load_layout(config.layout)
    agents = build_agents(config, layout, np.random.default_rng(0))
    ck_path = checkpoint if os.path.isabs(checkpoint) else os.path.join(run_dir, checkpoint)
    agents.store.load_arrays(load_checkpoint(ck_path))
    return config, layout, agents


def evaluate_checkpoint(run_dir: str, split: str, seed: int = 0, greedy: bool = False,
                        checkpoint: str = "checkpoint_final.ck") -> EvalResult:
    """Roll every task of a split under the checkpointed agents."""
    config, layout, agents = load_run(run_dir, checkpoint)
    out = evaluate_agents(agents, config, layout, split,
                          np.random.default_rng(seed), greedy=greedy)
    return EvalResult(out["goals"], out["splits"], out["returns"], out["reached"],
                      out["mean_ep1"], out["mean_epN"], out["failed"])


def collect_task_latents(agents: Agents, config: RunConfig, layout, tasks,
                         rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
    """Posterior means after one full iteration on each task, [n_tasks, m_dim].

    The trained policy gathers the trajectory; the task encoder streams it.
    """
    if agents.encoder is None:
        raise ConfigurationError(f"method {config.method!r} trains no task encoder")
    grid = isinstance(layout, GridLayout)
    B = len(tasks)
    from .envs import GridEnv, PointEnv
    from .envs import pointrobot as probot
    envs = [(GridEnv(layout) if grid else PointEnv(layout)) for _ in range(B)]
    for env, task in zip(envs, tasks):
        env.reset(task)
    policy = agents.policy
    A = policy.action_dim
    h_enc = agents.encoder.init_hidden(B)
    with no_grad():
        mu0, lv0 = agents.encoder.posterior(h_enc)
    mu_cur, lv_cur = mu0.data.copy(), lv0.data.copy()
    h_pol = policy.init_hidden(B)
    pa = np.zeros((B, A), np.float32)
    prb = np.zeros((B, 1), np.float32)
    for t in range(layout.steps_per_iteration):
        obs_t = np.stack([e.observe() for e in envs])
        if policy.recurrent:
            if agents.kind == "discrete":
                a, _, _, h_pol = policy.act(obs_t, pa, prb, h_pol, rng, greedy=greedy)
            else:
                u, sq, _, _, h_pol = policy.act(obs_t, pa, prb, h_pol, rng, greedy=greedy)
        else:
            bel = np.concatenate([mu_cur, lv_cur], axis=1).astype(np.float32)
            if agents.kind == "discrete":
                a, _, _ = policy.act(obs_t, bel, rng, greedy=greedy)
            else:
                u, sq, _, _ = policy.act(obs_t, bel, rng, greedy=greedy)
        step_next = np.zeros((B, obs_t.shape[1]), np.float32)
        rew = np.zeros((B, 1), np.float32)
        for w, env in enumerate(envs):
            if agents.kind == "discrete":
                res = env.step(int(a[w]))
                step_next[w] = gw.one_hot(layout, res.next_state)
            else:
                disp = probot.clamp_action(sq[w] * layout.max_speed, layout.max_speed)
                res = env.step(tuple(disp))
                step_next[w] = np.asarray(res.next_state, np.float32)
            rew[w, 0] = res.reward
        a_feat = np.eye(A, dtype=np.float32)[a] if agents.kind == "discrete" else sq.astype(np.float32)
        mu_cur, lv_cur, h_enc = agents.encoder.step_np(step_next, a_feat, rew, h_enc)
        pa = a_feat
        prb = rew
    return mu_cur.astype(np.float64)


def reward_map(agents: Agents, config: RunConfig, layout: GridLayout,
               weights: np.ndarray, rng: np.random.Generator,
               latents: np.ndarray | None = None) -> dict:
    """Decoder reward for every cell under one mixed latent.

    ``weights`` is [m_dim, n]; ``latents`` [n, m_dim] defaults to posterior
    means collected by rolling the trained policy on n fresh train tasks.
    """
    if not isinstance(layout, GridLayout):
        raise ConfigurationError("reward maps are defined on the gridworld")
    if latents is None:
        tasks = [gw.sample_task(layout, config.task_split, rng)
                 for _ in range(config.n_normal)]
        latents = collect_task_latents(agents, config, layout, tasks, rng)
    m_hat = mix_latents(latents, weights)
    feats = np.eye(layout.n_cells, dtype=np.float32)
    values = imaginary_reward(agents.decoder, m_hat, feats)  # [n_cells]
    grid = values.reshape(layout.height, layout.width)
    best = int(values.argmax())
    return {
        "values": grid,
        "argmax_cell": (best // layout.width, best % layout.width),
        "worker_weights": mean_weights_per_worker(weights),
        "latents": latents,
    }


# ---------------------------------------------------------------------------
# file emitters


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_pgm(path: str, values: np.ndarray, vmin: float, vmax: float):
    """ASCII PGM; values outside [vmin, vmax] clip. Bit-exact to re-read."""
    v = np.asarray(values, dtype=np.float64)
    span = vmax - vmin if vmax > vmin else 1.0
    gray = np.clip(np.rint((v - vmin) / span * 255.0), 0, 255).astype(int)
    with open(path, "w") as f:
        f.write(f"P2\n{v.shape[1]} {v.shape[0]}\n255\n")
        for row in gray:
            f.write(" ".join(str(g) for g in row) + "\n")


def write_svg(path: str, values: np.ndarray, vmin: float, vmax: float,
              cell: int = 32, mark: tuple | None = None, labels: dict | None = None):
    """Grayscale grid; optional cross mark on one cell, single-char labels."""
    v = np.asarray(values, dtype=np.float64)
    h, w = v.shape
    span = vmax - vmin if vmax > vmin else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" height="{h * cell}">']
    for r in range(h):
        for c in range(w):
            g = int(np.clip(np.rint((v[r, c] - vmin) / span * 255.0), 0, 255))
            parts.append(f'<rect x="{c * cell}" y="{r * cell}" width="{cell}" height="{cell}" '
                         f'fill="rgb({g},{g},{g})" stroke="gray"/>')
            lab = labels.get((r, c)) if labels else None
            if lab:
                fill = "white" if g < 128 else "black"
                parts.append(f'<text x="{c * cell + 4}" y="{r * cell + 12}" font-size="10" '
                             f'fill="{fill}">{lab}</text>')
    if mark is not None:
        r, c = mark
        x0, y0 = c * cell, r * cell
        parts.append(f'<line x1="{x0 + 4}" y1="{y0 + 4}" x2="{x0 + cell - 4}" '
                     f'y2="{y0 + cell - 4}" stroke="red" stroke-width="3"/>')
        parts.append(f'<line x1="{x0 + 4}" y1="{y0 + cell - 4}" x2="{x0 + cell - 4}" '
                     f'y2="{y0 + 4}" stroke="red" stroke-width="3"/>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def _write_manifest(out_dir: str, entry: dict):
    path = os.path.join(out_dir, "manifest.json")
    rows = []
    if os.path.isfile(path):
        with open(path) as f:
            rows = json.load(f)
    rows.append(entry)
    with open(path, "w") as f:
        json.dump(rows, f, indent=2, sort_keys=True)


def emit_heatmap(result: EvalResult, layout: GridLayout, out_dir: str,
                 stem: str = "heatmap") -> dict:
    """Per-goal mean-return grid from an EvalResult: CSV + PGM + SVG."""
    if not isinstance(layout, GridLayout):
        raise ConfigurationError("heatmaps are defined on the gridworld")
    os.makedirs(out_dir, exist_ok=True)
    opt_hi = 1.0 * layout.H  # per-episode return can never beat all-goal steps
    grid = np.full((layout.height, layout.width), -0.1 * layout.H)
    labels = {}
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["row", "col", "split", "return_ep1", "return_epN", "reached"])
        for g, sp, ret, rc in zip(result.goals, result.splits, result.returns, result.reached):
            r, c = g
            grid[r, c] = ret[-1]
            labels[(r, c)] = sp[0].upper() + ("2" if sp == "test2" else "")
            wr.writerow([r, c, sp, _fmt(ret[0]), _fmt(ret[-1]), int(rc)])
    vmin, vmax = -0.1 * layout.H, opt_hi
    write_pgm(os.path.join(out_dir, f"{stem}.pgm"), grid, vmin, vmax)
    write_svg(os.path.join(out_dir, f"{stem}.svg"), grid, vmin, vmax, labels=labels)
    _write_manifest(out_dir, {"artifact": stem, "kind": "heatmap",
                              "tasks": len(result.goals), "failed": result.failed})
    return {"csv": csv_path, "grid": grid}


def emit_reward_map(run_dir: str, out_dir: str, weights: np.ndarray | None = None,
                    seed: int = 0, stem: str = "reward_map",
                    checkpoint: str = "checkpoint_final.ck") -> dict:
    """Decoder reward landscape for one mixture draw: CSV + PGM + SVG.

    Defaults to a fresh convex draw; the SVG cross-marks the argmax cell.
    """
    config, layout, agents = load_run(run_dir, checkpoint)
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = sample_mixture_weights(config.n_normal, config.m_dim, config.beta, rng)
    res = reward_map(agents, config, layout, weights, rng)
    os.makedirs(out_dir, exist_ok=True)
    grid = res["values"]
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["row", "col", "split", "reward"])
        for r in range(layout.height):
            for c in range(layout.width):
                try:
                    sp = layout.split_of((r, c))
                except ConfigurationError:
                    sp = "none"
                wr.writerow([r, c, sp, _fmt(grid[r, c])])
    with open(os.path.join(out_dir, f"{stem}_weights.csv"), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["worker", "mean_weight"])
        for i, wv in enumerate(res["worker_weights"]):
            wr.writerow([i, _fmt(wv)])
    write_pgm(os.path.join(out_dir, f"{stem}.pgm"), grid, -0.1, 1.0)
    write_svg(os.path.join(out_dir, f"{stem}.svg"), grid, -0.1, 1.0,
              mark=res["argmax_cell"])
    _write_manifest(out_dir, {"artifact": stem, "kind": "reward_map", "run": run_dir,
                              "seed": seed, "argmax_cell": list(res["argmax_cell"])})
    return {"csv": csv_path, "grid": grid, "argmax_cell": res["argmax_cell"]}


def dump_latents(run_dir: str, out_dir: str, splits: tuple = ("train", "test"),
                 seed: int = 0, stem: str = "latents",
                 checkpoint: str = "checkpoint_final.ck") -> str:
    """End-of-iteration posterior means per task, one CSV row per task."""
    config, layout, agents = load_run(run_dir, checkpoint)
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{stem}.csv")
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["split", "goal_a", "goal_b"] + [f"m{d}" for d in range(config.m_dim)])
        for split in splits:
            if isinstance(layout, GridLayout):
                tasks = [gw.TaskSpec("gridworld", g, split) for g in layout.goals(split)]
            else:
                from .trainer import _point_eval_tasks
                tasks = _point_eval_tasks(layout, split)
            mus = collect_task_latents(agents, config, layout, tasks, rng)
            for task, mu in zip(tasks, mus):
                wr.writerow([split, _fmt(float(task.goal[0])), _fmt(float(task.goal[1]))]
                            + [_fmt(v) for v in mu])
    _write_manifest(out_dir, {"artifact": stem, "kind": "latents", "run": run_dir,
                              "seed": seed, "splits": list(splits)})
    return path


def write_eval_csv(result: EvalResult, out_dir: str, stem: str = "eval") -> str:
    """Per-task returns for any environment, one row per task."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{stem}.csv")
    n_ep = result.returns.shape[1]
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["goal_a", "goal_b", "split"]
                    + [f"return_ep{i + 1}" for i in range(n_ep)] + ["reached"])
        for g, sp, ret, rc in zip(result.goals, result.splits, result.returns, result.reached):
            wr.writerow([_fmt(float(g[0])), _fmt(float(g[1])), sp]
                        + [_fmt(v) for v in ret] + [int(rc)])
    _write_manifest(out_dir, {"artifact": stem, "kind": "eval",
                              "tasks": result.n_tasks, "failed": result.failed})
    return path


def trailing_mean(series: np.ndarray, window: int = 5) -> np.ndarray:
    """Moving average that shrinks at the start: row t averages the last
    ``window`` points available up to t."""
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    for t in range(len(x)):
        out[t] = x[max(0, t - window + 1):t + 1].mean()
    return out


def read_metrics(run_dir: str) -> dict:
    """metrics.csv as column arrays."""
    path = os.path.join(run_dir, "metrics.csv")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, data = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in data]) for i, h in enumerate(header)}
    return cols


CURVE_METRICS = ("train_return_ep1", "train_return_epN", "train_failed",
                 "test_return_ep1", "test_return_epN", "test_failed")


def emit_curves(run_dirs: list, out_dir: str, window: int = 5,
                stem: str = "curves") -> str:
    """Across-seed learning curves: per-frame mean and std of smoothed
    evaluation metrics. All runs must share the evaluation frame grid."""
    if not run_dirs:
        raise ConfigurationError("no run directories given")
    all_cols = [read_metrics(d) for d in run_dirs]
    frames = all_cols[0]["frames"]
    for d, cols in zip(run_dirs, all_cols):
        if len(cols["frames"]) != len(frames) or not np.array_equal(cols["frames"], frames):
            raise ConfigurationError(f"{d}: evaluation frame grid differs from {run_dirs[0]}")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{stem}.csv")
    smoothed = {m: np.stack([trailing_mean(c[m], window) for c in all_cols])
                for m in CURVE_METRICS}
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        header = ["frames", "n_seeds"]
        for m in CURVE_METRICS:
            header += [f"{m}_mean", f"{m}_std"]
        wr.writerow(header)
        for t in range(len(frames)):
            row = [_fmt(int(frames[t])), len(run_dirs)]
            for m in CURVE_METRICS:
                row += [_fmt(smoothed[m][:, t].mean()), _fmt(smoothed[m][:, t].std())]
            wr.writerow(row)
    _write_manifest(out_dir, {"artifact": stem, "kind": "curves",
                              "runs": list(run_dirs), "window": window})
    return path


def aggregate_final(run_dirs: list, window: int = 5) -> dict:
    """Across-seed mean/std of the smoothed FINAL evaluation row."""
    all_cols = [read_metrics(d) for d in run_dirs]
    out = {}
    for m in CURVE_METRICS:
        finals = np.array([trailing_mean(c[m], window)[-1] for c in all_cols])
        out[m] = {"mean": float(finals.mean()), "std": float(finals.std()),
                  "seeds": finals.tolist()}
    return out
