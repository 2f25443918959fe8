"""Release gate: one test per acceptance criterion, each printing a single
pass/fail line with the measured quantity.

Numerical and structural criteria run self-contained.  Training-outcome
criteria read finished runs under runs/acceptance/ (produced by
scripts/train_fleet.sh) and fail with an actionable message when the
artifacts are absent.
"""

import hashlib
import os
import time

import numpy as np

from oracles import check_gradients, gae_bruteforce
from latentmix import report
from latentmix.envs import load_layout, mean_optimal_return, stay_at_origin_return
from latentmix.envs import gridworld as gw
from latentmix.envs import pointrobot as probot
from latentmix.mixture import imaginary_reward, mix_latents, sample_mixture_weights, weight_bounds
from latentmix.nn import Tensor, use_dtype, load_checkpoint
from latentmix.nn import tensor as tz
from latentmix.nn.layers import dropout, gru_step, gru_weight_init, linear
from latentmix.nn.losses import bce_with_logits, kl_diag_gaussians, mse_loss
from latentmix.policy import gae
from latentmix.trainer import RunConfig, run_training

RUNS = os.path.join(os.path.dirname(__file__), os.pardir, "runs", "acceptance")
EVAL_SEEDS = (123, 124)

TINY = dict(state_enc=12, reward_enc=4, gru_hidden=16, belief=12, head=12,
            m_dim=5, dec_hidden=(12, 12), vae_batch=4, n_t_samples=4,
            vae_warmup=500, frame_budget=1920, eval_every_frames=1920)


def _report(name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" | {detail}"
    print(line)
    assert ok, line


def _fleet(prefix: str, n: int = 4) -> list:
    return [os.path.join(RUNS, f"{prefix}_s{i}") for i in range(n)]


def _missing(dirs: list) -> list:
    return [d for d in dirs
            if not os.path.isfile(os.path.join(d, "checkpoint_final.ck"))]


_eval_cache: dict = {}


def _eval(run_dir: str, split: str):
    """Mean episode-N return and failed-task count, averaged over fixed
    evaluation seeds."""
    key = (run_dir, split)
    if key not in _eval_cache:
        rets, fails = [], []
        for seed in EVAL_SEEDS:
            res = report.evaluate_checkpoint(run_dir, split, seed=seed)
            rets.append(res.mean_epN)
            fails.append(res.failed)
        _eval_cache[key] = (float(np.mean(rets)), float(np.mean(fails)))
    return _eval_cache[key]


def _fleet_eval(dirs: list, split: str):
    rows = [_eval(d, split) for d in dirs]
    return (float(np.mean([r[0] for r in rows])),
            float(np.mean([r[1] for r in rows])))


# ---------------------------------------------------------------------------
# 1. gradient correctness of every differentiable op


def _rnd(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _op_table():
    """name -> builder(rng) returning (scalar_fn, params_to_check)."""

    def away_from(a, b, gap=0.05):
        # finite differences need |a-b| > h everywhere
        d = b.data - a.data
        b.data = b.data + np.where(np.abs(d) < gap, np.sign(d + 0.5) * gap, 0.0)
        return b

    def t_add(rng):
        a, b = _rnd(rng, 3, 4), _rnd(rng, 1, 4)
        return lambda: (a + b).sum(), [a, b]

    def t_mul(rng):
        a, b = _rnd(rng, 2, 3, 4), _rnd(rng, 3, 1)
        return lambda: (a * b).sum(), [a, b]

    def t_div(rng):
        a, b = _rnd(rng, 3, 4), Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        return lambda: (a / b).sum(), [a, b]

    def t_power(rng):
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        return lambda: (a ** 2.5).sum(), [a]

    def t_matmul(rng):
        a, b = _rnd(rng, 3, 4), _rnd(rng, 4, 5)
        return lambda: (a @ b).sum(), [a, b]

    def t_exp(rng):
        a = _rnd(rng, 4, 3)
        return lambda: tz.exp(a).sum(), [a]

    def t_log(rng):
        a = Tensor(rng.uniform(0.3, 3.0, (4, 3)), requires_grad=True)
        return lambda: tz.log(a).sum(), [a]

    def t_tanh(rng):
        a = _rnd(rng, 4, 3)
        return lambda: tz.tanh(a).sum(), [a]

    def t_sigmoid(rng):
        a = _rnd(rng, 4, 3)
        return lambda: tz.sigmoid(a).sum(), [a]

    def t_relu(rng):
        a = Tensor(rng.normal(size=(4, 3)) + np.sign(rng.normal(size=(4, 3))) * 0.3,
                   requires_grad=True)
        return lambda: tz.relu(a).sum(), [a]

    def t_sum_axis(rng):
        a = _rnd(rng, 2, 3, 4)
        return lambda: (a.sum(axis=1) ** 2.0).sum(), [a]

    def t_mean(rng):
        a = _rnd(rng, 3, 4)
        return lambda: (a.mean(axis=0, keepdims=True) * 3.0).sum(), [a]

    def t_reshape(rng):
        a = _rnd(rng, 3, 4)
        return lambda: (a.reshape(2, 6) ** 2.0).sum(), [a]

    def t_take(rng):
        a = _rnd(rng, 5, 3)
        idx = rng.integers(0, 5, size=7)  # duplicates accumulate
        return lambda: (a[idx] ** 2.0).sum(), [a]

    def t_concat(rng):
        a, b = _rnd(rng, 3, 2), _rnd(rng, 3, 4)
        return lambda: (tz.concat([a, b], axis=1) ** 2.0).sum(), [a, b]

    def t_minimum(rng):
        a = _rnd(rng, 4, 3)
        b = away_from(a, _rnd(rng, 4, 3))
        return lambda: tz.minimum(a, b).sum(), [a, b]

    def t_clip(rng):
        a = _rnd(rng, 4, 3)
        a.data = a.data + np.where(np.abs(np.abs(a.data) - 1.0) < 0.05, 0.1, 0.0)
        return lambda: tz.clip(a, -1.0, 1.0).sum(), [a]

    def t_log_softmax(rng):
        a = _rnd(rng, 4, 5)
        w = rng.normal(size=(4, 5))
        return lambda: (tz.log_softmax(a, axis=1) * Tensor(w)).sum(), [a]

    def t_reparameterize(rng):
        mu, lv = _rnd(rng, 3, 4), _rnd(rng, 3, 4)
        noise = rng.normal(size=(3, 4))
        return lambda: (tz.gaussian_reparameterize(mu, lv, noise) ** 2.0).sum(), [mu, lv]

    def t_bce(rng):
        logits = _rnd(rng, 4, 3)
        targets = rng.integers(0, 2, size=(4, 3)).astype(float)
        return lambda: bce_with_logits(logits, targets, reduction="sum"), [logits]

    def t_mse(rng):
        pred = _rnd(rng, 4, 3)
        target = rng.normal(size=(4, 3))
        return lambda: mse_loss(pred, target, reduction="mean"), [pred]

    def t_kl(rng):
        mu1, lv1 = _rnd(rng, 3, 4), _rnd(rng, 3, 4)
        mu2, lv2 = _rnd(rng, 3, 4), _rnd(rng, 3, 4)
        return lambda: kl_diag_gaussians(mu1, lv1, mu2, lv2).sum(), [mu1, lv1, mu2, lv2]

    def t_linear(rng):
        x, W, b = _rnd(rng, 4, 3), _rnd(rng, 3, 5), _rnd(rng, 5)
        return lambda: tz.tanh(linear(x, W, b)).sum(), [x, W, b]

    def t_gru(rng):
        params = [Tensor(a, requires_grad=True)
                  for a in gru_weight_init(rng, 3, 4, dtype=np.float64)]
        x, h = _rnd(rng, 2, 3), _rnd(rng, 2, 4)
        return lambda: (gru_step(x, h, *params) ** 2.0).sum(), params + [x, h]

    def t_dropout(rng):
        a = _rnd(rng, 4, 5)
        seed = int(rng.integers(0, 2 ** 31))  # fixed mask per instance
        return (lambda: (dropout(a, 0.4, True, np.random.default_rng(seed)) ** 2.0).sum(),
                [a])

    return [t_add, t_mul, t_div, t_power, t_matmul, t_exp, t_log, t_tanh,
            t_sigmoid, t_relu, t_sum_axis, t_mean, t_reshape, t_take, t_concat,
            t_minimum, t_clip, t_log_softmax, t_reparameterize, t_bce, t_mse,
            t_kl, t_linear, t_gru, t_dropout]


def test_criterion_01_every_op_matches_finite_differences():
    table = _op_table()
    t0 = time.monotonic()
    worst = 0.0
    with use_dtype(np.float64):
        for i in range(100):
            build = table[i % len(table)]
            rng = np.random.default_rng(10_000 + i)
            fn, params = build(rng)
            worst = max(worst, check_gradients(fn, params, h=1e-4, tol=1e-4))
    took = time.monotonic() - t0
    _report("criterion 1: autodiff vs central differences",
            worst < 1e-4 and took < 60.0,
            f"100 instances over {len(table)} ops, worst rel err {worst:.2e}, {took:.1f}s")


# ---------------------------------------------------------------------------
# 2. mixture weight distribution properties


def test_criterion_02_mixture_weight_distribution():
    rng = np.random.default_rng(2024)
    draws = 100_000
    ok, parts = True, []
    for n, beta in ((14, 1.0), (16, 2.0), (2, 0.5)):
        w = sample_mixture_weights(n, draws, beta, rng)
        sum_err = float(np.abs(w.sum(axis=1) - 1.0).max())
        lo, hi = weight_bounds(n, beta)
        in_bounds = bool((w >= lo - 1e-9).all() and (w <= hi + 1e-9).all())
        sd = beta * np.sqrt((n - 1) / (n * n * (n + 1.0)))
        mean_err = float(np.abs(w.mean(axis=0) - 1.0 / n).max())
        mean_ok = mean_err < 3.0 * sd / np.sqrt(draws)
        ok &= sum_err < 1e-9 and in_bounds and mean_ok
        parts.append(f"(n={n},b={beta}) sum_err={sum_err:.1e} "
                     f"bounds={'ok' if in_bounds else 'VIOLATED'} mean_err={mean_err:.1e}")
    _report("criterion 2: mixture weight sums, bounds, means", ok, "; ".join(parts))


# ---------------------------------------------------------------------------
# 3. GAE against the literal double sum


def test_criterion_03_gae_matches_bruteforce():
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 11))
        r = rng.normal(size=T)
        v = rng.normal(size=T)
        boot = float(rng.normal())
        adv, _ = gae(r, v, boot, gamma=0.95, tau=0.95)
        want = gae_bruteforce(r, v, boot, 0.95, 0.95)
        worst = max(worst, float(np.abs(adv - want).max()))
    _report("criterion 3: GAE oracle equivalence", worst < 1e-10,
            f"1000 sequences, worst abs err {worst:.2e}")


# ---------------------------------------------------------------------------
# 4. structural reductions via checkpoint inspection


def test_criterion_04_structural_reductions(tmp_path):
    rl2 = run_training(RunConfig.defaults("gridworld", "rl2", seed=0, **TINY),
                       str(tmp_path / "rl2"))
    vb = run_training(RunConfig.defaults("gridworld", "varibad", seed=0, **TINY),
                      str(tmp_path / "vb"))
    rl2_keys = set(load_checkpoint(rl2["checkpoint"]))
    vb_keys = set(load_checkpoint(vb["checkpoint"]))
    rl2_ok = not [k for k in rl2_keys if k.startswith("vae.")]
    encoders = {k.split(".gru")[0] for k in vb_keys if ".gru" in k}
    vb_ok = encoders == {"vae.enc"}
    _report("criterion 4: structural reductions", rl2_ok and vb_ok,
            f"rl2 task-inference params: {sorted(k for k in rl2_keys if k.startswith('vae.'))}; "
            f"varibad recurrent encoders: {sorted(encoders)}")


# ---------------------------------------------------------------------------
# 5-9. training-outcome criteria over the finished fleet


def test_criterion_05_training_competence_on_train_split():
    layout = load_layout("gridworld_default")
    optimum = mean_optimal_return(layout, "train")
    dirs = _fleet("rl2") + _fleet("ldm")
    missing = _missing(dirs)
    if missing:
        _report("criterion 5: train-split competence", False,
                f"missing artifacts {missing[:3]}; run scripts/train_fleet.sh")
    for d in dirs:
        frames = int(open(os.path.join(d, "metrics.csv")).read()
                     .splitlines()[-1].split(",")[0])
        assert frames <= 10_000_000, f"{d} exceeded the frame budget"
    rl2_ret, _ = _fleet_eval(_fleet("rl2"), "train")
    ldm_ret, _ = _fleet_eval(_fleet("ldm"), "train")
    ok = rl2_ret >= 0.9 * optimum and ldm_ret >= 0.9 * optimum
    _report("criterion 5: train-split competence", ok,
            f"optimum {optimum:.2f}; rl2 {rl2_ret:.2f} ({rl2_ret / optimum:.1%}), "
            f"ldm {ldm_ret:.2f} ({ldm_ret / optimum:.1%}), 4 seeds each")


def test_criterion_06_generalization_ordering():
    dirs = _fleet("rl2") + _fleet("ldm") + _fleet("varibad")
    missing = _missing(dirs)
    if missing:
        _report("criterion 6: test-split ordering", False,
                f"missing artifacts {missing[:3]}; run scripts/train_fleet.sh")
    rl2_ret, rl2_failed = _fleet_eval(_fleet("rl2"), "test")
    vb_ret, vb_failed = _fleet_eval(_fleet("varibad"), "test")
    ldm_ret, ldm_failed = _fleet_eval(_fleet("ldm"), "test")
    ok = (ldm_failed <= 0.7 * rl2_failed and ldm_failed <= 0.7 * vb_failed
          and ldm_ret > rl2_ret and ldm_ret > vb_ret)
    _report("criterion 6: test-split ordering", ok,
            f"failed: ldm {ldm_failed:.2f} vs rl2 {rl2_failed:.2f}, varibad {vb_failed:.2f} "
            f"(need <=0.7x); returns: ldm {ldm_ret:.2f} vs rl2 {rl2_ret:.2f}, "
            f"varibad {vb_ret:.2f}")


def _max_test_cell_reward(run_dir: str, n_draws: int = 100) -> float:
    config, layout, agents = report.load_run(run_dir)
    rng = np.random.default_rng(99)
    tasks = [gw.sample_task(layout, "train", rng) for _ in range(config.n_normal)]
    latents = report.collect_task_latents(agents, config, layout, tasks, rng)
    feats = np.eye(layout.n_cells, dtype=np.float32)
    test_idx = [layout.cell_index(g) for g in layout.test_goals]
    best = -np.inf
    for _ in range(n_draws):
        w = sample_mixture_weights(config.n_normal, config.m_dim, 1.0, rng)
        vals = imaginary_reward(agents.decoder, mix_latents(latents, w), feats)
        best = max(best, float(vals[test_idx].max()))
    return best


def test_criterion_07_decoder_dropout_opens_test_cells():
    p07, p00 = _fleet("ldm", 1)[0], _fleet("ldm_p0", 1)[0]
    missing = _missing([p07, p00])
    if missing:
        _report("criterion 7: reward-map dropout ablation", False,
                f"missing artifacts {missing}; run scripts/train_fleet.sh")
    best_p00 = _max_test_cell_reward(p00)
    best_p07 = _max_test_cell_reward(p07)
    ok = best_p00 < 0.1 and best_p07 > 0.3
    _report("criterion 7: reward-map dropout ablation", ok,
            f"max mapped test-cell reward over 100 draws: p_drop=0 {best_p00:.3f} "
            f"(<0.1), p_drop=0.7 {best_p07:.3f} (>0.3)")


def test_criterion_08_dropout_reduces_failed_test_goals():
    dirs = _fleet("ldm") + _fleet("ldm_p0")
    missing = _missing(dirs)
    if missing:
        _report("criterion 8: failed counts vs dropout", False,
                f"missing artifacts {missing[:3]}; run scripts/train_fleet.sh")
    _, failed_p07 = _fleet_eval(_fleet("ldm"), "test")
    _, failed_p00 = _fleet_eval(_fleet("ldm_p0"), "test")
    _report("criterion 8: failed counts vs dropout", failed_p07 < failed_p00,
            f"mean failed test goals over 4 seeds: p_drop=0.7 {failed_p07:.2f} "
            f"< p_drop=0.0 {failed_p00:.2f}")


def test_criterion_09_extrapolation_level_tradeoff():
    dirs = _fleet("extrap_b10") + _fleet("extrap_b25")
    missing = _missing(dirs)
    if missing:
        _report("criterion 9: extrapolation level trade-off", False,
                f"missing artifacts {missing[:3]}; run scripts/train_fleet.sh")
    near_b10, _ = _fleet_eval(_fleet("extrap_b10"), "test")
    near_b25, _ = _fleet_eval(_fleet("extrap_b25"), "test")
    far_b10, _ = _fleet_eval(_fleet("extrap_b10"), "test2")
    far_b25, _ = _fleet_eval(_fleet("extrap_b25"), "test2")
    ok = far_b25 > far_b10 and near_b10 > near_b25
    _report("criterion 9: extrapolation level trade-off", ok,
            f"interpolation split: b=1.0 {near_b10:.2f} vs b=2.5 {near_b25:.2f} "
            f"(want b=1.0 higher); extrapolation split: b=1.0 {far_b10:.2f} vs "
            f"b=2.5 {far_b25:.2f} (want b=2.5 higher)")


# ---------------------------------------------------------------------------
# 10. determinism of full runs


def test_criterion_10_identical_seeds_byte_identical_metrics(tmp_path):
    cfg = dict(frame_budget=5 * 1920, eval_every_frames=2 * 1920)
    outs = []
    for name in ("a", "b"):
        c = RunConfig.defaults("gridworld", "ldm", seed=7, **cfg)
        outs.append(run_training(c, str(tmp_path / name)))
    digests = [hashlib.sha256(open(o["metrics"], "rb").read()).hexdigest()
               for o in outs]
    same_ck = open(outs[0]["checkpoint"], "rb").read() == \
        open(outs[1]["checkpoint"], "rb").read()
    _report("criterion 10: run determinism", digests[0] == digests[1] and same_ck,
            f"metrics sha256 {digests[0][:12]} == {digests[1][:12]}, "
            f"checkpoints byte-equal: {same_ck}")


# ---------------------------------------------------------------------------
# continuous-control smoke criterion


def test_smoke_point_robot_beats_stay_at_origin():
    run = os.path.join(RUNS, "point_ldm_s0")
    if _missing([run]):
        _report("smoke: point robot beats stay-at-origin", False,
                f"missing artifacts [{run}]; run scripts/train_fleet.sh")
    layout = load_layout("pointrobot_default")
    floor = float(np.mean([stay_at_origin_return(layout, t)
                           for t in probot.eval_tasks(layout)]))
    rows = open(os.path.join(run, "metrics.csv")).read().splitlines()
    cols = rows[0].split(",")
    fi, ri = cols.index("frames"), cols.index("test_return_epN")
    hits = [(int(r.split(",")[fi]), float(r.split(",")[ri])) for r in rows[1:]
            if int(r.split(",")[fi]) <= 2_000_000 and float(r.split(",")[ri]) > floor]
    if hits:
        detail = (f"stay-at-origin floor {floor:.1f}; first beat at "
                  f"{hits[0][0]} frames ({hits[0][1]:.1f})")
    else:
        detail = f"stay-at-origin floor {floor:.1f}; never beaten within 2e6 frames"
    _report("smoke: point robot beats stay-at-origin", bool(hits), detail)
