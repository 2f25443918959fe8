"""Command-line entry points: training runs, checkpoint evaluation, decoder
reward maps, latent exports, and learning-curve aggregation.

Every config key is overridable with ``--set key=value`` (values coerced to
the field's type); artifacts land under the ``--out`` directory.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import report
from .envs import GridLayout, load_layout
from .nn import ConfigurationError, TrainingError
from .nn.store import CheckpointError
from .trainer import METHODS, RunConfig, run_training

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value: str):
    if name not in _FIELDS:
        raise ConfigurationError(f"unknown config key {name!r}")
    kind = type(_FIELDS[name].default)
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ConfigurationError(f"{name!r} wants a boolean, got {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    if kind is tuple:
        return tuple(int(x) for x in value.split(",") if x)
    return value


def _apply_sets(raw: dict, pairs):
    for kv in pairs or ():
        key, eq, value = kv.partition("=")
        if not eq:
            raise ConfigurationError(f"--set wants key=value, got {kv!r}")
        raw[key] = _coerce(key, value)


def _split_checkpoint(path: str):
    """A checkpoint path implies its run directory."""
    if os.path.isdir(path):
        return path, "checkpoint_final.ck"
    return os.path.dirname(path) or ".", os.path.basename(path)


def cmd_train(args) -> int:
    raw = {}
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
        if "dec_hidden" in raw:
            raw["dec_hidden"] = tuple(raw["dec_hidden"])
    env = args.env or raw.pop("env", "gridworld")
    method = args.method or raw.pop("method", "ldm")
    raw.pop("env", None)
    raw.pop("method", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    _apply_sets(raw, args.set)
    config = RunConfig.defaults(env, method, **raw)
    out = run_training(config, args.out)
    print(f"trained {config.method} on {config.layout}: "
          f"{out['iterations']} iterations, {out['frames']} frames")
    print(f"metrics: {out['metrics']}")
    print(f"checkpoint: {out['checkpoint']}")
    return 0


def cmd_eval(args) -> int:
    run_dir, ck = _split_checkpoint(args.checkpoint)
    result = report.evaluate_checkpoint(run_dir, args.split, seed=args.seed,
                                        greedy=args.greedy, checkpoint=ck)
    out_dir = args.out or os.path.join(run_dir, "eval")
    path = report.write_eval_csv(result, out_dir, stem=f"eval_{args.split}")
    with open(os.path.join(run_dir, "config.json")) as f:
        layout = load_layout(json.load(f)["layout"])
    if isinstance(layout, GridLayout):
        report.emit_heatmap(result, layout, out_dir, stem=f"heatmap_{args.split}")
    print(f"{result.n_tasks} tasks | episode-1 return {result.mean_ep1:.3f} | "
          f"episode-N return {result.mean_epN:.3f} | failed {result.failed}")
    print(f"wrote {path}")
    return 0


def cmd_reward_map(args) -> int:
    run_dir, ck = _split_checkpoint(args.checkpoint)
    weights = None
    if args.weights:
        weights = np.atleast_2d(np.loadtxt(args.weights, delimiter=","))
    elif args.onehot is not None:
        with open(os.path.join(run_dir, "config.json")) as f:
            raw = json.load(f)
        weights = np.zeros((raw["m_dim"], raw["n_normal"]))
        weights[:, args.onehot] = 1.0
    out_dir = args.out or os.path.join(run_dir, "reward_maps")
    res = report.emit_reward_map(run_dir, out_dir, weights=weights,
                                 seed=args.seed, checkpoint=ck)
    print(f"argmax cell {res['argmax_cell']} | "
          f"reward range [{res['grid'].min():.3f}, {res['grid'].max():.3f}]")
    print(f"wrote {res['csv']}")
    return 0


def cmd_dump_latents(args) -> int:
    run_dir, ck = _split_checkpoint(args.checkpoint)
    splits = tuple(s for s in args.splits.split(",") if s)
    out_dir = args.out or os.path.join(run_dir, "latents")
    path = report.dump_latents(run_dir, out_dir, splits=splits,
                               seed=args.seed, checkpoint=ck)
    print(f"wrote {path}")
    return 0


def cmd_curves(args) -> int:
    path = report.emit_curves(args.runs, args.out, window=args.window)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="latentmix",
        description="Meta-RL with imaginary tasks mixed from learned latent beliefs.")
    sub = p.add_subparsers(dest="cmd", required=True)

    tr = sub.add_parser("train", help="run one training configuration")
    tr.add_argument("--config", help="JSON file of config fields (a resolved "
                                     "config.json works)")
    tr.add_argument("--env", choices=("gridworld", "pointrobot"))
    tr.add_argument("--method", choices=METHODS)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", required=True, help="run directory for artifacts")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override any config field (repeatable)")
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="roll a checkpoint over a task split")
    ev.add_argument("--checkpoint", required=True,
                    help="checkpoint file or its run directory")
    ev.add_argument("--split", default="test",
                    choices=("train", "test", "test2", "oracle"))
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--greedy", action="store_true",
                    help="act by argmax/mean instead of sampling")
    ev.add_argument("--out")
    ev.set_defaults(fn=cmd_eval)

    rm = sub.add_parser("reward-map", help="decoder reward landscape for one "
                                           "mixture-weight draw")
    rm.add_argument("--checkpoint", required=True)
    rm.add_argument("--weights", help="CSV of [latent_dim, n_normal] weights")
    rm.add_argument("--onehot", type=int, metavar="WORKER",
                    help="all weight mass on one worker")
    rm.add_argument("--seed", type=int, default=0)
    rm.add_argument("--out")
    rm.set_defaults(fn=cmd_reward_map)

    dl = sub.add_parser("dump-latents", help="per-task posterior means as CSV")
    dl.add_argument("--checkpoint", required=True)
    dl.add_argument("--splits", default="train,test")
    dl.add_argument("--seed", type=int, default=0)
    dl.add_argument("--out")
    dl.set_defaults(fn=cmd_dump_latents)

    cv = sub.add_parser("curves", help="across-seed smoothed learning curves")
    cv.add_argument("--runs", nargs="+", required=True)
    cv.add_argument("--out", required=True)
    cv.add_argument("--window", type=int, default=5)
    cv.set_defaults(fn=cmd_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, TrainingError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
