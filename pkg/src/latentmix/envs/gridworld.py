"""7x7 goal-navigation gridworld with hidden goals and fixed-length episodes.

Observations are one-hot over cells.  Actions: 0 up, 1 down, 2 left,
3 right, 4 stay.  Reward is 1.0 when the transition lands on (or stays at)
the goal and -0.1 otherwise; episodes never terminate early because staying
at the goal keeps paying.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import ConfigurationError
from .layouts import Cell, GridLayout

N_ACTIONS = 5
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    goal: tuple
    split: str


@dataclass(frozen=True)
class StepResult:
    next_state: tuple
    reward: float
    episode_done: bool
    iteration_done: bool


def grid_move(layout: GridLayout, state: Cell, action: int) -> Cell:
    """Clamped single-cell move; moves off the boundary leave state unchanged."""
    if not 0 <= action < N_ACTIONS:
        raise ConfigurationError(f"invalid action {action}")
    dr, dc = MOVES[action]
    r = state[0] + dr
    c = state[1] + dc
    if 0 <= r < layout.height and 0 <= c < layout.width:
        return (r, c)
    return state


def grid_step(layout: GridLayout, task: TaskSpec, state: Cell, action: int, t: int) -> StepResult:
    """Pure transition at iteration step ``t`` (0-based over the H*N steps)."""
    nxt = grid_move(layout, state, action)
    reward = 1.0 if nxt == task.goal else -0.1
    steps_done = t + 1
    return StepResult(
        next_state=nxt,
        reward=reward,
        episode_done=steps_done % layout.H == 0,
        iteration_done=steps_done >= layout.steps_per_iteration,
    )


def sample_task(layout: GridLayout, split: str, rng: np.random.Generator) -> TaskSpec:
    goals = layout.goals(split)
    if not goals:
        raise ConfigurationError(f"split {split!r} of layout {layout.name} is empty")
    goal = goals[int(rng.integers(len(goals)))]
    return TaskSpec(kind="gridworld", goal=goal, split=layout.split_of(goal))


def optimal_episode_return(layout: GridLayout, goal: Cell) -> float:
    """Shortest-path return: d-1 penalty steps, +1 on arrival, stay after.

    Matches horizon-limited value iteration exactly (the move landing on the
    goal already pays +1, so only the d-1 approach steps pay -0.1).
    """
    d = abs(goal[0] - layout.start[0]) + abs(goal[1] - layout.start[1])
    if d == 0:
        return layout.H * 1.0
    if d > layout.H:
        return layout.H * -0.1
    return (layout.H - d + 1) * 1.0 + (d - 1) * (-0.1)


def mean_optimal_return(layout: GridLayout, split: str) -> float:
    goals = layout.goals(split)
    return float(np.mean([optimal_episode_return(layout, g) for g in goals]))


def one_hot(layout: GridLayout, state: Cell) -> np.ndarray:
    v = np.zeros(layout.n_cells, dtype=np.float32)
    v[layout.cell_index(state)] = 1.0
    return v


class GridEnv:
    """Stateful wrapper running iterations of N fixed-length episodes.

    The agent returns to the start cell at every episode boundary while the
    task (goal) and the iteration step counter persist.
    """

    def __init__(self, layout: GridLayout):
        self.layout = layout
        self.task = None
        self.state = layout.start
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return self.layout.n_cells

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    def reset(self, task: TaskSpec) -> np.ndarray:
        self.task = task
        self.state = self.layout.start
        self.t = 0
        return one_hot(self.layout, self.state)

    def observe(self) -> np.ndarray:
        return one_hot(self.layout, self.state)

    def step(self, action: int) -> StepResult:
        if self.task is None:
            raise ConfigurationError("step before reset")
        res = grid_step(self.layout, self.task, self.state, action, self.t)
        self.t += 1
        self.state = self.layout.start if res.episode_done else res.next_state
        return res
