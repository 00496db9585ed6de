"""Autonomous execution: chunked leader predictions driving the follower at 1 kHz.

The control loop runs every millisecond. Every tenth tick it latches the
next buffered leader row. When the buffer runs low it requests a new chunk,
which lands ``inference_latency_ms`` later while the buffer keeps serving.
Inference itself is simulated in the same deterministic loop; only its
arrival time is delayed.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bilateral import BilateralGains, Side, fourch_commands, position_only_commands
from .datalog import Episode, Frame, JointSample, encode_episode
from .errors import ConfigurationError, ExecutionFault, UnderrunFault
from .harness.tasks import Scenario, TaskSpec, judge_phases, mean_grasp_torque, sample_scenario
from .observers import ObserverBank
from .simcore import render_camera, step_world

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleConfig:
    motor_rate_hz: int = 1000
    command_rate_hz: int = 100
    inference_latency_ms: float = 14.3
    refill_trigger: int = 2

    def __post_init__(self):
        if self.motor_rate_hz <= 0 or self.command_rate_hz <= 0 or self.motor_rate_hz % self.command_rate_hz:
            raise ConfigurationError("motor rate must be a positive multiple of the command rate")
        if self.motor_rate_hz != 1000:
            raise ConfigurationError("the simulator steps at 1000 Hz")
        if self.inference_latency_ms < 0 or self.refill_trigger < 0:
            raise ConfigurationError("latency and refill trigger must be non-negative")

    @property
    def ticks_per_command(self) -> int:
        return self.motor_rate_hz // self.command_rate_hz

    @property
    def latency_ticks(self) -> int:
        return math.ceil(round(self.inference_latency_ms * self.motor_rate_hz / 1000.0, 9))

    def within_horizon(self, k: int) -> bool:
        return self.inference_latency_ms < 1000.0 * k / self.command_rate_hz

    def underrun_free(self) -> bool:
        """True when a refill always lands before the remaining rows run out."""
        return self.inference_latency_ms <= 1000.0 * self.refill_trigger / self.command_rate_hz


class ChunkBuffer:
    """FIFO of leader rows from the most recent chunk."""

    def __init__(self, k: int, n_state: int):
        self.k = k
        self.rows = np.zeros((0, n_state))
        self.head = 0

    @property
    def level(self) -> int:
        return len(self.rows) - self.head

    def load(self, chunk: np.ndarray, drop: int = 0):
        """Replace the remaining tail with ``chunk`` minus its first ``drop`` (already stale) rows."""
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2 or chunk.shape[0] != self.k or chunk.shape[1] != self.rows.shape[1]:
            raise ExecutionFault(f"chunk of shape {chunk.shape}, expected ({self.k}, {self.rows.shape[1]})")
        if not np.isfinite(chunk).all():
            raise ExecutionFault("model produced a non-finite chunk")
        self.rows = chunk[drop:]
        self.head = 0

    def pop(self) -> np.ndarray:
        if self.level <= 0:
            raise UnderrunFault("chunk buffer underrun: no row to latch")
        row = self.rows[self.head]
        self.head += 1
        return row


def row_side(row: np.ndarray, elapsed_s: float) -> Side:
    """Leader command from a latched row, angle advanced along the row's velocity."""
    r = row.reshape(-1, 3)
    return Side(r[:, 0] + r[:, 1] * elapsed_s, r[:, 1], r[:, 2])


class ModelSource:
    """Chunk source backed by a trained :class:`~biact.policy.PolicyModel`."""

    def __init__(self, model):
        self.model = model
        self.k = model.config.k
        self.force = not model.config.force_mask

    def __call__(self, t_us, frames, follower_state):
        return self.model.infer_chunk(frames, follower_state)


class ReplaySource:
    """Feeds back a recorded leader trajectory at the command rate, bypassing any model."""

    def __init__(self, episode: Episode, k: int = 20, force: bool = True, factor: int = 10):
        self.rows = episode.leader_states()[::factor]
        self.t_us = episode.sample_times[::factor]
        self.k = k
        self.force = force

    def __call__(self, t_us, frames, follower_state):
        i = int(np.searchsorted(self.t_us, t_us, side="left"))
        idx = np.minimum(np.arange(i, i + self.k), len(self.rows) - 1)
        return self.rows[idx]


@dataclass
class EpisodeResult:
    task: str
    seed: int
    stiffness: float
    phases: dict
    fault: str | None
    underruns: int
    n_inferences: int
    mean_grasp_torque: float
    latch_ticks: np.ndarray = field(repr=False)
    pos_err: np.ndarray = field(repr=False)
    force_sum: np.ndarray = field(repr=False)
    episode: Episode = field(repr=False)

    @property
    def success(self) -> bool:
        return bool(self.phases.get("place"))

    def summary(self) -> dict:
        return {"task": self.task, "seed": self.seed, "stiffness": self.stiffness, "phases": self.phases,
                "fault": self.fault, "underruns": self.underruns, "n_inferences": self.n_inferences,
                "mean_grasp_torque": None if math.isnan(self.mean_grasp_torque) else self.mean_grasp_torque,
                "pos_err_rms": _rms(self.pos_err), "force_sum_rms": _rms(self.force_sum)}

    def to_bytes(self) -> bytes:
        head = json.dumps(self.summary(), sort_keys=True).encode()
        return head + b"\n" + self.latch_ticks.astype("<i8").tobytes() + encode_episode(self.episode)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if np.size(x) else 0.0


class Executor:
    """One autonomous rollout; call :meth:`tick` once per millisecond."""

    def __init__(self, scenario: Scenario, source, schedule: ScheduleConfig | None = None,
                 gains: BilateralGains | None = None, record: bool = True):
        self.scenario = scenario
        self.task = scenario.task
        self.source = source
        self.schedule = schedule or ScheduleConfig()
        self.gains = gains or BilateralGains()
        self.world = scenario.make_world()
        cfg = self.world.config
        self.cfg = cfg
        self.obs = ObserverBank.for_config(cfg)
        self.nominal_inertia = self.obs.inertia
        self.n = cfg.n_joints
        self.buffer = ChunkBuffer(source.k, 3 * self.n)
        self.force = getattr(source, "force", True)
        self.tick_no = 0
        self.pops = 0
        self.pending = None  # (arrival tick, pops at request, chunk)
        self.row = None
        self.latch_tick = 0
        self.latch_ticks: list[int] = []
        self.n_inferences = 0
        self.frames = None
        if not self.schedule.within_horizon(source.k):
            log.warning("inference latency %.1f ms exceeds the %d-row chunk horizon",
                        self.schedule.inference_latency_ms, source.k)
        self.episode = None
        if record:
            from .harness.collect import new_episode
            self.episode = new_episode(self.task, scenario, "autonomous", {"force": str(self.force)})

    def _follower_state(self, tau_f):
        f = self.world.follower
        return np.stack([f.angle, f.velocity, tau_f], axis=1).reshape(-1)

    def _render(self):
        w = self.world
        self.frames = np.stack([render_camera(w, c) for c in range(self.cfg.n_cameras)])
        if self.episode is not None:
            for c in range(self.cfg.n_cameras):
                self.episode.append_frame(Frame(w.sim_time_us, c, self.frames[c]))

    def _infer(self, tau_f):
        self.n_inferences += 1
        return np.asarray(self.source(self.world.sim_time_us, self.frames, self._follower_state(tau_f)),
                          dtype=np.float64)

    def tick(self) -> list[str]:
        """Advance one motor tick; returns the schedule events that happened."""
        events = []
        n, sch = self.tick_no, self.schedule
        w = self.world
        tau_f = self.obs.update(w.follower.applied, w.follower.velocity)
        latch = n % sch.ticks_per_command == 0
        if latch:
            self._render()
        if n == 0:
            self.buffer.load(self._infer(tau_f))
            events.append("initial_chunk")
        if latch and self.pending is None and self.buffer.level <= sch.refill_trigger:
            self.pending = (n + sch.latency_ticks, self.pops, self._infer(tau_f))
            events.append("request")
        if self.pending is not None and n >= self.pending[0]:
            _, pops_then, chunk = self.pending
            self.buffer.load(chunk, drop=min(self.pops - pops_then, len(chunk)))
            self.pending = None
            events.append("arrive")
        if latch:
            self.row = self.buffer.pop()
            self.pops += 1
            self.latch_tick = n
            self.latch_ticks.append(n)
            events.append("latch")
        leader = row_side(self.row, (n - self.latch_tick) / sch.motor_rate_hz)
        follower = Side(w.follower.angle, w.follower.velocity, tau_f)
        if self.force:
            ref_f = fourch_commands(leader, follower, self.gains, self.nominal_inertia)[1]
        else:
            ref_f = position_only_commands(leader, follower, self.gains, self.nominal_inertia)
        cmd_f = ref_f + self.obs.disturbance
        if self.episode is not None:
            values = np.stack([leader.angle, leader.velocity, leader.torque,
                               follower.angle, follower.velocity, follower.torque], axis=1)
            self.episode.append_sample(JointSample(w.sim_time_us, values))
        self.world = step_world(w, np.zeros(self.n), cmd_f)
        self.tick_no += 1
        return events


def run_autonomous(task: TaskSpec, source, seed: int, duration_ms: int | None = None, stiffness: float | None = None,
                   schedule: ScheduleConfig | None = None, scenario: Scenario | None = None,
                   gains: BilateralGains | None = None) -> EpisodeResult:
    """Closed-loop rollout from a seeded scenario; faults end the run and are reported, not raised."""
    if getattr(source, "k", None) is None:
        raise ConfigurationError("chunk source must declare its chunk length k")
    n_state = task.state_dim
    model = getattr(source, "model", None)
    if model is not None and model.config.n_state != n_state:
        raise ConfigurationError(f"model emits N={model.config.n_state}; task {task.name} needs N={n_state}")
    if scenario is None:
        scenario = sample_scenario(task, seed, task.trained_stiffness[0] if stiffness is None else stiffness)
    duration_ms = task.duration_ms if duration_ms is None else duration_ms
    ex = Executor(scenario, source, schedule, gains)
    arms = task.arms
    grasped = np.zeros((duration_ms, arms), dtype=bool)
    obj_x = np.zeros((duration_ms, arms))
    fault, underruns, done = None, 0, 0
    for t in range(duration_ms):
        try:
            ex.tick()
        except UnderrunFault as exc:
            fault, underruns = str(exc), 1
            break
        except ExecutionFault as exc:
            fault = str(exc)
            break
        grasped[t] = [o.grasped for o in ex.world.objects]
        obj_x[t] = [o.position for o in ex.world.objects]
        done = t + 1
    ep = ex.episode
    ep.header.meta["fault"] = fault or ""
    ep.finalize()
    grasped, obj_x = grasped[:done], obj_x[:done]
    v = ep.sample_values[:done]
    grip = [ex.cfg.gripper_index(a) for a in range(arms)]
    phases = judge_phases(task, grasped, obj_x).as_dict() if done else {"pick": False, "move": False, "place": False}
    if fault:
        phases["place"] = False
    torque = mean_grasp_torque(v[:, grip, 5], grasped) if done else float("nan")
    return EpisodeResult(task.name, seed, scenario.stiffness, phases, fault, underruns, ex.n_inferences, torque,
                         np.array(ex.latch_ticks), v[:, :, 0] - v[:, :, 3], v[:, :, 2] + v[:, :, 5], ep)
