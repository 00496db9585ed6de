"""Desk-scale task definitions and seeded scenario sampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..simcore import ContactObject, WorldConfig, make_world

HARDNESS_LADDER = (50.0, 200.0, 500.0)
TRAINED_HARDNESS = (50.0, 500.0)
PROBE_HARDNESS = (200.0,)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    arms: int = 1
    trained_stiffness: tuple[float, ...] = TRAINED_HARDNESS
    probe_stiffness: tuple[float, ...] = PROBE_HARDNESS
    object_x: tuple[float, float] = (-0.25, -0.15)
    radius: float = 0.08
    radius_jitter: float = 0.004
    start_x: float = -0.6
    place_region: tuple[float, float] = (0.4, 0.8)
    place_x: float = 0.6
    duration_ms: int = 4000
    grasp_threshold: float = 0.5
    coordination_window_ms: int = 100
    joints_per_arm: int = 2

    def __post_init__(self):
        if self.arms not in (1, 2):
            raise ConfigurationError(f"tasks support 1 or 2 arms, got {self.arms}")
        if any(k <= 0 for k in self.stiffness_ladder):
            raise ConfigurationError("object stiffness must be positive")
        pick_hi = self.object_x[1] + self.radius + self.radius_jitter
        if pick_hi >= self.place_region[0]:
            raise ConfigurationError("pick and place regions overlap")

    @property
    def stiffness_ladder(self):
        return tuple(sorted(set(self.trained_stiffness) | set(self.probe_stiffness)))

    @property
    def state_dim(self) -> int:
        return self.arms * self.joints_per_arm * 3

    def world_config(self) -> WorldConfig:
        return WorldConfig(n_arms=self.arms, place_regions=(self.place_region,) * self.arms)


TASKS = {
    "pick_place": TaskSpec("pick_place", arms=1),
    "lift_bar": TaskSpec("lift_bar", arms=2, duration_ms=4500),
}
ALIASES = {"pick": "pick_place", "lift": "lift_bar"}


def get_task(name: str) -> TaskSpec:
    key = ALIASES.get(name, name)
    if key not in TASKS:
        raise ConfigurationError(f"unknown task {name!r} (known: {', '.join(TASKS)})")
    return TASKS[key]


@dataclass
class Scenario:
    task: TaskSpec
    seed: int
    stiffness: float
    object_x: float
    radius: float
    start_angles: np.ndarray = field(repr=False, default=None)

    def objects(self):
        return [ContactObject(position=self.object_x, radius=self.radius, stiffness=self.stiffness, arm=a)
                for a in range(self.task.arms)]

    def make_world(self):
        return make_world(self.task.world_config(), self.objects(), self.start_angles, self.seed)

    def meta(self) -> dict:
        return {"task": self.task.name, "seed": self.seed, "stiffness": repr(self.stiffness),
                "object_x": repr(self.object_x), "radius": repr(self.radius),
                "start_angles": ",".join(repr(float(a)) for a in self.start_angles)}

    @classmethod
    def from_meta(cls, meta: dict) -> "Scenario":
        task = get_task(meta["task"])
        return cls(task, int(meta["seed"]), float(meta["stiffness"]), float(meta["object_x"]),
                   float(meta["radius"]), np.array([float(a) for a in meta["start_angles"].split(",")]))


def sample_scenario(task: TaskSpec, seed: int, stiffness: float, radius_jitter: float | None = None) -> Scenario:
    """Draw object position and shape offset from a seeded generator."""
    rng = np.random.default_rng(seed)
    x = float(rng.uniform(*task.object_x))
    jitter = task.radius_jitter if radius_jitter is None else radius_jitter
    radius = float(task.radius + rng.uniform(-jitter, jitter)) if jitter > 0 else task.radius
    start = np.zeros(task.arms * task.joints_per_arm)
    start[::task.joints_per_arm] = task.start_x
    return Scenario(task, seed, float(stiffness), x, radius, start)


@dataclass
class PhaseOutcome:
    pick: bool
    move: bool
    place: bool
    grasp_ms: list

    def as_dict(self):
        return {"pick": self.pick, "move": self.move, "place": self.place}


def judge_phases(task: TaskSpec, grasped: np.ndarray, object_x: np.ndarray) -> PhaseOutcome:
    """Score Pick / Move / Place from per-tick (ticks, arms) grasp flags and object positions.

    Pick: every arm grasped its object (for two arms, first grasps within
    the coordination window). Move: no arm let go before its object entered
    the place region. Place: the run ends with every object released inside
    the region. Each phase requires the previous one.
    """
    grasped = np.asarray(grasped, dtype=bool).reshape(len(grasped), -1)
    object_x = np.asarray(object_x, dtype=np.float64).reshape(len(object_x), -1)
    lo, hi = task.place_region
    first = []
    for a in range(grasped.shape[1]):
        hits = np.flatnonzero(grasped[:, a])
        first.append(int(hits[0]) if hits.size else None)
    pick = bool(grasped.size) and all(f is not None for f in first)
    if pick and len(first) > 1:
        pick = max(first) - min(first) <= task.coordination_window_ms
    move = pick
    if move:
        for a, start in enumerate(first):
            inside = (object_x[start:, a] >= lo) & (object_x[start:, a] <= hi)
            arrive = np.flatnonzero(inside)
            if not arrive.size or not grasped[start:start + arrive[0] + 1, a].all():
                move = False
    place = move and not grasped[-1].any() and bool(np.all((object_x[-1] >= lo) & (object_x[-1] <= hi)))
    return PhaseOutcome(pick, move, place, first)


def mean_grasp_torque(grip_torque: np.ndarray, grasped: np.ndarray) -> float:
    """Mean squeezing torque (negated follower gripper estimate) over grasped ticks; nan if never grasped."""
    grip_torque = np.asarray(grip_torque, dtype=np.float64).reshape(len(grip_torque), -1)
    grasped = np.asarray(grasped, dtype=bool).reshape(len(grasped), -1)
    if not grasped.any():
        return float("nan")
    return float(-grip_torque[grasped].mean())
