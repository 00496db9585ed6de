"""Torque-versus-hardness tables built from recorded episodes."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .tasks import get_task

SCHEMA = "# biact-analysis v1"
COLUMNS = ("section", "stiffness", "episode", "t_ms", "value")


def grip_columns(ep) -> list[int]:
    n = ep.header.n_joints
    task = get_task(ep.header.meta["task"])
    return [a * task.joints_per_arm + task.joints_per_arm - 1 for a in range(n // task.joints_per_arm)]


def steady_torque(ep) -> float:
    """Mean squeezing torque over ticks where the follower gripper holds above the attach level."""
    v = ep.sample_values
    if not len(v):
        return float("nan")
    squeeze = -v[:, grip_columns(ep), 5]
    level = get_task(ep.header.meta["task"]).world_config().grasp_threshold
    held = squeeze >= level
    return float(squeeze[held].mean()) if held.any() else float("nan")


@dataclass
class AnalysisReport:
    summary: list = field(default_factory=list)  # (stiffness, n, mean steady torque, across-trial variance)
    series: list = field(default_factory=list)  # (stiffness, episode, t_ms, gripper torque)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(SCHEMA + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for k, n, mean, var in self.summary:
            w.writerow(("mean", repr(k), n, "", repr(mean)))
            w.writerow(("variance", repr(k), n, "", repr(var)))
        for k, e, t, val in self.series:
            w.writerow(("series", repr(k), e, t, repr(val)))
        return buf.getvalue()

    def mean_by_stiffness(self) -> dict:
        return {k: mean for k, _, mean, _ in self.summary}

    def variance_by_stiffness(self) -> dict:
        return {k: var for k, _, _, var in self.summary}


def report_analysis(episodes, series_stride_ms: int = 10) -> AnalysisReport:
    """Group episodes by object stiffness; gripper torque series plus per-group mean and variance."""
    groups: dict[float, list] = {}
    report = AnalysisReport()
    tasks = {ep.header.meta.get("task") for ep in episodes}
    if len(tasks) > 1:
        from ..errors import ConfigurationError
        raise ConfigurationError(f"episodes mix tasks: {sorted(map(str, tasks))}")
    for i, ep in enumerate(episodes):
        k = float(ep.header.meta["stiffness"])
        groups.setdefault(k, []).append(steady_torque(ep))
        squeeze = -ep.sample_values[::series_stride_ms][:, grip_columns(ep), 5].mean(axis=1)
        t_ms = ep.sample_times[::series_stride_ms] // 1000
        report.series.extend((k, i, int(t), float(s)) for t, s in zip(t_ms, squeeze))
    for k in sorted(groups):
        vals = np.array([x for x in groups[k] if not np.isnan(x)])
        mean = float(vals.mean()) if vals.size else float("nan")
        var = float(vals.var()) if vals.size else float("nan")
        report.summary.append((k, len(groups[k]), mean, var))
    return report
