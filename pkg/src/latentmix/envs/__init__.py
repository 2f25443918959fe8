from .layouts import Cell, GridLayout, PointLayout, load_layout
from .gridworld import (
    MOVES,
    N_ACTIONS,
    GridEnv,
    StepResult,
    TaskSpec,
    grid_move,
    grid_step,
    mean_optimal_return,
    one_hot,
    optimal_episode_return,
)
from .gridworld import sample_task as sample_grid_task
from .pointrobot import (
    PointEnv,
    clamp_action,
    eval_tasks,
    point_step,
    stay_at_origin_return,
)
from .pointrobot import sample_task as sample_point_task

__all__ = [
    "Cell",
    "GridEnv",
    "GridLayout",
    "MOVES",
    "N_ACTIONS",
    "PointEnv",
    "PointLayout",
    "StepResult",
    "TaskSpec",
    "clamp_action",
    "eval_tasks",
    "grid_move",
    "grid_step",
    "load_layout",
    "mean_optimal_return",
    "one_hot",
    "optimal_episode_return",
    "point_step",
    "sample_grid_task",
    "sample_point_task",
    "stay_at_origin_return",
]
