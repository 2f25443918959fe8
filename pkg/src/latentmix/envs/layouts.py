"""Task-split layout definitions and their config-file loader.

Layouts are plain JSON shipped with the package (or user files passed by
path); every load re-validates the split invariants, most importantly that
train and test goal sets are strictly disjoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from ..nn import ConfigurationError

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridLayout:
    name: str
    width: int
    height: int
    start: Cell
    train_goals: tuple[Cell, ...]
    test_goals: tuple[Cell, ...]
    test2_goals: tuple[Cell, ...] = ()
    H: int = 30
    N: int = 4

    def __post_init__(self):
        all_goals = [("train", g) for g in self.train_goals]
        all_goals += [("test", g) for g in self.test_goals]
        all_goals += [("test2", g) for g in self.test2_goals]
        for split, (r, c) in all_goals + [("start", self.start)]:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ConfigurationError(f"{self.name}: {split} cell {(r, c)} out of bounds")
        if not self.train_goals:
            raise ConfigurationError(f"{self.name}: empty train split")
        train, test, test2 = map(set, (self.train_goals, self.test_goals, self.test2_goals))
        if train & test or train & test2 or test & test2:
            raise ConfigurationError(f"{self.name}: goal splits overlap")
        if self.start in train | test | test2:
            raise ConfigurationError(f"{self.name}: start cell is a goal")
        if self.H < 1 or self.N < 1:
            raise ConfigurationError(f"{self.name}: H and N must be positive")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def steps_per_iteration(self) -> int:
        return self.H * self.N

    def cell_index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def goals(self, split: str) -> tuple[Cell, ...]:
        if split == "train":
            return self.train_goals
        if split == "test":
            return self.test_goals
        if split == "test2":
            return self.test2_goals
        if split == "oracle":
            return self.train_goals + self.test_goals
        raise ConfigurationError(f"unknown split {split!r}")

    def split_of(self, goal: Cell) -> str:
        if goal in self.train_goals:
            return "train"
        if goal in self.test_goals:
            return "test"
        if goal in self.test2_goals:
            return "test2"
        raise ConfigurationError(f"{goal} is not a goal of layout {self.name}")


@dataclass(frozen=True)
class PointLayout:
    """Continuous goal-reaching task family; goals live on radius annuli."""

    name: str
    train_radii: tuple[tuple[float, float], ...]
    test_radii: tuple[tuple[float, float], ...]
    eval_goals: tuple[tuple[float, float], ...]
    max_speed: float = 0.1
    H: int = 200
    N: int = 2

    def __post_init__(self):
        for lo, hi in self.train_radii + self.test_radii:
            if not (0.0 <= lo < hi):
                raise ConfigurationError(f"{self.name}: bad radius interval [{lo}, {hi})")
        for lo1, hi1 in self.train_radii:
            for lo2, hi2 in self.test_radii:
                if lo1 < hi2 and lo2 < hi1:
                    raise ConfigurationError(
                        f"{self.name}: train interval [{lo1},{hi1}) overlaps test [{lo2},{hi2})"
                    )
        if not self.train_radii:
            raise ConfigurationError(f"{self.name}: empty train split")
        if self.max_speed <= 0 or self.H < 1 or self.N < 1:
            raise ConfigurationError(f"{self.name}: bad max_speed/H/N")

    @property
    def steps_per_iteration(self) -> int:
        return self.H * self.N

    def radii(self, split: str) -> tuple[tuple[float, float], ...]:
        if split == "train":
            return self.train_radii
        if split == "test":
            return self.test_radii
        if split == "oracle":
            return self.train_radii + self.test_radii
        raise ConfigurationError(f"unknown split {split!r}")


def _as_cells(rows) -> tuple[Cell, ...]:
    return tuple((int(r), int(c)) for r, c in rows)


def _layout_from_dict(cfg: dict):
    kind = cfg.get("kind")
    if kind == "gridworld":
        return GridLayout(
            name=cfg["name"],
            width=int(cfg["width"]),
            height=int(cfg["height"]),
            start=(int(cfg["start"][0]), int(cfg["start"][1])),
            train_goals=_as_cells(cfg["train_goals"]),
            test_goals=_as_cells(cfg["test_goals"]),
            test2_goals=_as_cells(cfg.get("test2_goals", [])),
            H=int(cfg["H"]),
            N=int(cfg["N"]),
        )
    if kind == "pointrobot":
        return PointLayout(
            name=cfg["name"],
            train_radii=tuple((float(a), float(b)) for a, b in cfg["train_radii"]),
            test_radii=tuple((float(a), float(b)) for a, b in cfg["test_radii"]),
            eval_goals=tuple((float(x), float(y)) for x, y in cfg["eval_goals"]),
            max_speed=float(cfg.get("max_speed", 0.1)),
            H=int(cfg["H"]),
            N=int(cfg["N"]),
        )
    raise ConfigurationError(f"unknown layout kind {kind!r}")


def load_layout(name_or_path: str):
    """Load a layout by shipped name (e.g. ``gridworld_default``) or file path."""
    path = str(name_or_path)
    if path.endswith(".json"):
        with open(path) as f:
            return _layout_from_dict(json.load(f))
    ref = resources.files("latentmix.envs").joinpath("data", path + ".json")
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"no shipped layout named {name_or_path!r}")
    return _layout_from_dict(json.loads(text))
