"""Demonstration recording, quality gating, dataset collection and replay."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bilateral import BilateralGains
from ..datalog import Episode, EpisodeHeader, Frame, JointSample, read_episode, write_episode
from ..errors import DemonstrationFault
from ..observers import ObserverBank
from ..simcore import render_camera, step_world
from ..teleop import TeleopLoop
from .expert import ScriptedExpert
from .tasks import Scenario, TaskSpec, sample_scenario

log = logging.getLogger(__name__)

POS_ERR_RMS_LIMIT = 0.02  # rad
FORCE_SUM_RMS_LIMIT = 0.1  # N*m, during contact
MAX_ATTEMPTS = 5


def frame_schedule(duration_ms: int, rng=None, jitter_ms: int = 0) -> np.ndarray:
    """Capture ticks for the 100 Hz cameras, optionally jittered by up to ``jitter_ms``."""
    ticks = np.arange(0, duration_ms, 10)
    if jitter_ms and rng is not None:
        ticks = ticks + rng.integers(-jitter_ms, jitter_ms + 1, size=len(ticks))
        ticks = np.clip(ticks, 0, duration_ms - 1)
    return ticks


def new_episode(task: TaskSpec, scenario: Scenario, kind: str, extra_meta=None) -> Episode:
    cfg = task.world_config()
    meta = {"kind": kind, **scenario.meta()}
    if extra_meta:
        meta.update(extra_meta)
    w, h = cfg.image_size
    return Episode(EpisodeHeader(cfg.n_joints, 1000, 100, w, h, cfg.n_cameras, meta=meta))


def record_demonstration(scenario: Scenario, grasp_threshold: float | None = None, frame_jitter_ms: int = 0,
                         gains: BilateralGains | None = None) -> Episode:
    """Teleoperate one episode with the scripted expert on the leader."""
    task = scenario.task
    loop = TeleopLoop(scenario.make_world(), gains)
    expert = ScriptedExpert(scenario, grasp_threshold)
    ep = new_episode(task, scenario, "demo", {"grasp_threshold": repr(expert.threshold)})
    n_cam = task.world_config().n_cameras
    capture = set(frame_schedule(task.duration_ms, np.random.default_rng([scenario.seed, 1]),
                                 frame_jitter_ms).tolist())
    n = task.world_config().n_joints
    m = task.duration_ms
    dbg = {k: np.zeros((m, n)) for k in ("cmd_l", "cmd_f", "operator", "ext_f")}
    dbg["grasped"] = np.zeros((m, task.arms), dtype=bool)
    dbg["object_x"] = np.zeros((m, task.arms))
    dbg["grasp_force"] = np.zeros((m, task.arms))
    for tick in range(m):
        w = loop.world
        if tick in capture:
            for cam in range(n_cam):
                ep.append_frame(Frame(w.sim_time_us, cam, render_camera(w, cam)))
        leader, follower = loop.observe()
        op = expert.operator_torque(tick, w.leader.angle, w.leader.velocity, follower.torque, follower.angle)
        t, values, cmd_l, cmd_f = loop.step(op, (leader, follower))
        ep.append_sample(JointSample(t, values))
        nw = loop.world
        dbg["cmd_l"][tick], dbg["cmd_f"][tick], dbg["operator"][tick] = cmd_l, cmd_f, op
        dbg["ext_f"][tick] = nw.follower.external
        dbg["grasped"][tick] = [o.grasped for o in nw.objects]
        dbg["object_x"][tick] = [o.position for o in nw.objects]
        dbg["grasp_force"][tick] = nw.grasp_force
    ep.finalize()
    ep.debug = dbg
    ep.header.meta["phases"] = ";".join(f"{p}@{t}" for t, p in expert.events)
    return ep


@dataclass
class QualityReport:
    pos_err_rms: float
    force_sum_rms_contact: float

    @property
    def passed(self) -> bool:
        return self.pos_err_rms < POS_ERR_RMS_LIMIT and self.force_sum_rms_contact < FORCE_SUM_RMS_LIMIT


def demo_quality(ep: Episode) -> QualityReport:
    v = ep.sample_values
    pos_err = v[:, :, 0] - v[:, :, 3]
    force_sum = v[:, :, 2] + v[:, :, 5]
    contact = ep.debug.get("grasp_force") if ep.debug else None
    if contact is not None:
        jpa = v.shape[1] // contact.shape[1]
        grip_cols = [a * jpa + jpa - 1 for a in range(contact.shape[1])]
        mask = contact > 0
        sel = force_sum[:, grip_cols][mask]
        force_sum_rms = float(np.sqrt(np.mean(sel ** 2))) if sel.size else 0.0
    else:
        force_sum_rms = float(np.sqrt(np.mean(force_sum ** 2)))
    return QualityReport(float(np.sqrt(np.mean(pos_err ** 2))), force_sum_rms)


def collect(task: TaskSpec, n_episodes: int, seed: int, out_dir, frame_jitter_ms: int = 0,
            stiffness_set=None) -> list[Path]:
    """Record ``n_episodes`` gated demonstrations into ``out_dir`` as .biep files.

    Hardness cycles through the trained set; object placement and shape
    offsets come from per-episode seeds derived from ``seed``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    stiffness_set = tuple(stiffness_set or task.trained_stiffness)
    paths = []
    for i in range(n_episodes):
        k = stiffness_set[i % len(stiffness_set)]
        for attempt in range(MAX_ATTEMPTS):
            ep_seed = episode_seed(seed, i, attempt)
            try:
                ep = record_demonstration(sample_scenario(task, ep_seed, k), frame_jitter_ms=frame_jitter_ms)
            except DemonstrationFault as exc:
                log.warning("episode %d attempt %d faulted: %s", i, attempt, exc)
                continue
            q = demo_quality(ep)
            if q.passed:
                break
            log.warning("episode %d attempt %d rejected: %s", i, attempt, q)
        else:
            raise DemonstrationFault(f"episode {i}: no demonstration passed the quality gate")
        paths.append(write_episode(ep, out_dir / f"{task.name}_{i:03d}.biep"))
    return paths


def episode_seed(seed: int, index: int, attempt: int = 0) -> int:
    return int(np.random.SeedSequence([seed, index, attempt]).generate_state(1)[0])


def replay(path):
    """Re-simulate a demonstration from its logged commands.

    Returns ``(original, resimulated values, max abs difference)``.
    """
    ep = read_episode(path, with_debug=True)
    if not ep.debug:
        raise FileNotFoundError(f"{path} has no command log sidecar to replay")
    scenario = Scenario.from_meta(ep.header.meta)
    w = scenario.make_world()
    obs_l = ObserverBank.for_config(w.config)
    obs_f = ObserverBank.for_config(w.config)
    out = np.empty_like(ep.sample_values)
    for tick in range(ep.n_samples):
        tl = obs_l.update(w.leader.applied, w.leader.velocity)
        tf = obs_f.update(w.follower.applied, w.follower.velocity)
        out[tick] = np.stack([w.leader.angle, w.leader.velocity, tl, w.follower.angle, w.follower.velocity, tf],
                             axis=1)
        w = step_world(w, ep.debug["cmd_l"][tick], ep.debug["cmd_f"][tick], ep.debug["operator"][tick])
    return ep, out, float(np.max(np.abs(out - ep.sample_values))) if out.size else 0.0
