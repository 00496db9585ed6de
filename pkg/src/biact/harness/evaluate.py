"""Per-phase evaluation of a chunk source over a hardness set."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..executor import ModelSource, ScheduleConfig, run_autonomous
from .collect import episode_seed
from .tasks import TaskSpec, sample_scenario

PHASES = ("pick", "move", "place")


@dataclass
class ObjectRow:
    stiffness: float
    episodes: int = 0
    pick: int = 0
    move: int = 0
    place: int = 0
    faults: int = 0
    torques: list = field(default_factory=list)
    pos_err_rms: list = field(default_factory=list)
    force_sum_rms: list = field(default_factory=list)

    @property
    def mean_grasp_torque(self) -> float:
        vals = [t for t in self.torques if not math.isnan(t)]
        return float(np.mean(vals)) if vals else float("nan")

    def as_dict(self) -> dict:
        mt = self.mean_grasp_torque
        return {"stiffness": self.stiffness, "episodes": self.episodes, "pick": self.pick, "move": self.move,
                "place": self.place, "faults": self.faults,
                "mean_grasp_torque": None if math.isnan(mt) else round(mt, 9),
                "pos_err_rms": round(float(np.mean(self.pos_err_rms)), 9) if self.pos_err_rms else None,
                "force_sum_rms": round(float(np.mean(self.force_sum_rms)), 9) if self.force_sum_rms else None}


@dataclass
class EvalReport:
    task: str
    force: bool
    seeds: list
    rows: list

    def row(self, stiffness) -> ObjectRow:
        for r in self.rows:
            if r.stiffness == stiffness:
                return r
        raise KeyError(stiffness)

    def successes(self, stiffness_set=None) -> int:
        return sum(r.place for r in self.rows if stiffness_set is None or r.stiffness in stiffness_set)

    def phase_monotone(self) -> bool:
        return all(r.episodes >= r.pick >= r.move >= r.place for r in self.rows)

    def as_dict(self) -> dict:
        return {"task": self.task, "force": self.force, "seeds": self.seeds, "rows": [r.as_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=1)

    def table(self) -> str:
        lines = [f"task {self.task}  ({'Bi-ACT' if self.force else 'Bi-ACT w/o force'})",
                 f"{'K_obj':>8} {'n':>3} {'Pick':>5} {'Move':>5} {'Place':>5} {'torque':>8} {'faults':>6}"]
        for r in self.rows:
            lines.append(f"{r.stiffness:8.1f} {r.episodes:3d} {r.pick:5d} {r.move:5d} {r.place:5d} "
                         f"{r.mean_grasp_torque:8.3f} {r.faults:6d}")
        return "\n".join(lines)


def evaluate(model, task: TaskSpec, n_episodes: int = 10, seed: int = 7, stiffness_set=None,
             ablation: bool = False, schedule: ScheduleConfig | None = None, source=None) -> EvalReport:
    """Run ``n_episodes`` per object hardness; faults count as phase failures.

    With ``ablation`` the model runs with its torque inputs masked and the
    executor uses the position-only law. Every hardness shares the same
    episode seeds, so rows differ only in the object.
    """
    if source is None:
        if ablation and not model.config.force_mask:
            model = replace(model, config=replace(model.config, force_mask=True))
        source = ModelSource(model)
    stiffness_set = tuple(stiffness_set or task.stiffness_ladder)
    seeds = [episode_seed(seed, i) for i in range(n_episodes)]
    rows = []
    for k in stiffness_set:
        row = ObjectRow(float(k))
        for s in seeds:
            res = run_autonomous(task, source, s, scenario=sample_scenario(task, s, k), schedule=schedule)
            row.episodes += 1
            for ph in PHASES:
                setattr(row, ph, getattr(row, ph) + int(res.phases[ph]))
            row.faults += int(res.fault is not None)
            row.torques.append(res.mean_grasp_torque)
            row.pos_err_rms.append(float(np.sqrt(np.mean(res.pos_err ** 2))) if res.pos_err.size else 0.0)
            row.force_sum_rms.append(float(np.sqrt(np.mean(res.force_sum ** 2))) if res.force_sum.size else 0.0)
        rows.append(row)
    return EvalReport(task.name, getattr(source, "force", not ablation), seeds, rows)
