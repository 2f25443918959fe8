"""2-D point robot reaching hidden goals on radius annuli.

Per-step displacement is norm-clamped to ``max_speed``; the reward is the
negative taxicab distance to the hidden goal, so staying at the goal pays 0
and episodes run a fixed H steps.
"""

from __future__ import annotations

import numpy as np

from ..nn import ConfigurationError
from .gridworld import StepResult, TaskSpec
from .layouts import PointLayout


def clamp_action(action: np.ndarray, max_speed: float) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    norm = float(np.sqrt((a * a).sum()))
    if norm > max_speed:
        a = a * (max_speed / norm)
    return a


def point_step(layout: PointLayout, task: TaskSpec, state, action, t: int) -> StepResult:
    """Pure transition at iteration step ``t``."""
    nxt = np.asarray(state, dtype=np.float64) + clamp_action(action, layout.max_speed)
    gx, gy = task.goal
    reward = -(abs(nxt[0] - gx) + abs(nxt[1] - gy))
    steps_done = t + 1
    return StepResult(
        next_state=(float(nxt[0]), float(nxt[1])),
        reward=float(reward),
        episode_done=steps_done % layout.H == 0,
        iteration_done=steps_done >= layout.steps_per_iteration,
    )


def sample_task(layout: PointLayout, split: str, rng: np.random.Generator) -> TaskSpec:
    """Uniform over the split's annuli: radius by area-less length weighting
    (uniform on the union of intervals), angle uniform on [0, 2pi)."""
    intervals = layout.radii(split)
    if not intervals:
        raise ConfigurationError(f"split {split!r} of layout {layout.name} is empty")
    lengths = np.array([hi - lo for lo, hi in intervals])
    k = int(rng.choice(len(intervals), p=lengths / lengths.sum()))
    lo, hi = intervals[k]
    r = float(rng.uniform(lo, hi))
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    goal = (r * np.cos(theta), r * np.sin(theta))
    actual = "train" if any(lo <= r < hi for lo, hi in layout.train_radii) else "test"
    return TaskSpec(kind="pointrobot", goal=goal, split=actual)


def eval_tasks(layout: PointLayout) -> list[TaskSpec]:
    """The fixed evaluation goals (a subset of the test region)."""
    return [TaskSpec(kind="pointrobot", goal=g, split="test") for g in layout.eval_goals]


def stay_at_origin_return(layout: PointLayout, task: TaskSpec) -> float:
    gx, gy = task.goal
    return -(abs(gx) + abs(gy)) * layout.H


class PointEnv:
    def __init__(self, layout: PointLayout):
        self.layout = layout
        self.task = None
        self.state = (0.0, 0.0)
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return 2

    @property
    def action_dim(self) -> int:
        return 2

    def reset(self, task: TaskSpec) -> np.ndarray:
        self.task = task
        self.state = (0.0, 0.0)
        self.t = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.asarray(self.state, dtype=np.float32)

    def step(self, action) -> StepResult:
        if self.task is None:
            raise ConfigurationError("step before reset")
        res = point_step(self.layout, self.task, self.state, action, self.t)
        self.t += 1
        self.state = (0.0, 0.0) if res.episode_done else res.next_state
        return res
