"""Scripted demonstrator standing in for the human at the leader arm.

The expert pushes on the leader joints with a PD "hand" that tracks a
waypoint schedule: approach the object, close slowly until the follower's
reaction-force estimate reaches the grasp threshold, squeeze a little
further, carry the object to the place region and let go. Because closing
stops on sensed force, the recorded grasp adapts to object hardness.
"""
from __future__ import annotations

import numpy as np

from ..errors import DemonstrationFault
from .tasks import Scenario

HAND_GAINS = {"transport": (20.0, 1.8), "gripper": (100.0, 2.8)}
START_MS = 50
APPROACH_MS = 1000
CLOSE_SPEED = 0.3  # rad/s
CLOSE_BUDGET_MS = 1000
HOLD_MS = 250
TRANSPORT_MS = 1200
RELEASE_MS = 800
SQUEEZE_PER_NM = 0.04  # extra closure (rad) per N*m of threshold
PRECLOSE_MARGIN = 0.1
ARRIVAL_TOL = 0.05


def min_jerk(t, duration, a, b):
    """Position and velocity of a minimum-jerk move from a to b."""
    s = np.clip(t / duration, 0.0, 1.0)
    pos = a + (b - a) * (10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5)
    vel = (b - a) * (30 * s ** 2 - 60 * s ** 3 + 30 * s ** 4) / duration if 0 < t < duration else 0.0
    return pos, vel


class ScriptedExpert:
    def __init__(self, scenario: Scenario, grasp_threshold: float | None = None):
        self.scenario = scenario
        task = scenario.task
        self.task = task
        self.threshold = task.grasp_threshold if grasp_threshold is None else grasp_threshold
        cfg = task.world_config()
        self.t_idx = [cfg.transport_index(a) for a in range(task.arms)]
        self.g_idx = [cfg.gripper_index(a) for a in range(task.arms)]
        self.n = cfg.n_joints
        contact = scenario.objects()[0].contact_angle
        self.preclose = max(contact - PRECLOSE_MARGIN, 0.0)
        self.phase = "approach"
        self.phase_start = START_MS
        self.grip_target = [self.preclose] * task.arms
        self.detected_ms = [None] * task.arms
        self.events: list[tuple[int, str]] = []
        self.targets = np.array(scenario.start_angles, dtype=np.float64)
        self.target_vel = np.zeros(self.n)

    def _enter(self, phase, now):
        self.phase, self.phase_start = phase, now
        self.events.append((now, phase))

    def targets_at(self, now_ms: int, leader_angle, follower_torque, follower_angle=None):
        """Advance the schedule to ``now_ms`` and return (target, target velocity)."""
        grip_ref = leader_angle if follower_angle is None else follower_angle
        sc, task = self.scenario, self.task
        tgt, vel = self.targets, self.target_vel
        vel[:] = 0.0
        el = now_ms - self.phase_start
        if now_ms < START_MS:
            return tgt, vel
        if self.phase == "approach":
            for a in range(task.arms):
                tgt[self.t_idx[a]], vel[self.t_idx[a]] = min_jerk(el, APPROACH_MS, task.start_x, sc.object_x)
                tgt[self.g_idx[a]], vel[self.g_idx[a]] = min_jerk(el, APPROACH_MS, 0.0, self.preclose)
            if el >= APPROACH_MS:
                self._enter("close", now_ms)
        elif self.phase == "close":
            for a in range(task.arms):
                g = self.g_idx[a]
                if self.detected_ms[a] is None:
                    grip = -follower_torque[g]
                    if grip >= self.threshold and grip > 1e-3:
                        self.detected_ms[a] = now_ms
                        self.grip_target[a] = grip_ref[g] + SQUEEZE_PER_NM * self.threshold
                    else:
                        self.grip_target[a] = min(self.grip_target[a] + CLOSE_SPEED * 1e-3, 1.0)
                        vel[g] = CLOSE_SPEED
                tgt[g] = self.grip_target[a]
            if all(d is not None for d in self.detected_ms):
                self._enter("hold", now_ms)
            elif el > CLOSE_BUDGET_MS:
                raise DemonstrationFault(f"no grasp detected within {CLOSE_BUDGET_MS} ms (seed {sc.seed})")
        elif self.phase == "hold":
            if el >= HOLD_MS:
                self._enter("transport", now_ms)
        elif self.phase == "transport":
            for a in range(task.arms):
                tgt[self.t_idx[a]], vel[self.t_idx[a]] = min_jerk(el, TRANSPORT_MS, sc.object_x, task.place_x)
            if el >= TRANSPORT_MS:
                for a in range(task.arms):
                    if abs(leader_angle[self.t_idx[a]] - task.place_x) > ARRIVAL_TOL:
                        raise DemonstrationFault(f"arm {a} did not reach the place waypoint (seed {sc.seed})")
                self._enter("release", now_ms)
        elif self.phase == "release":
            for a in range(task.arms):
                tgt[self.g_idx[a]], vel[self.g_idx[a]] = min_jerk(el, RELEASE_MS, self.grip_target[a], 0.0)
            if el >= RELEASE_MS:
                self._enter("idle", now_ms)
        return tgt, vel

    def operator_torque(self, now_ms: int, leader_angle, leader_velocity, follower_torque, follower_angle=None):
        """Hand torque on the leader.

        Once a grasp is felt, the gripper squeeze is judged against the follower
        gripper the operator watches, so the grip force settles at once rather
        than creeping with the slow contact mode of the coupled pair.
        """
        tgt, vel = self.targets_at(now_ms, leader_angle, follower_torque, follower_angle)
        kp = np.empty(self.n)
        kd = np.empty(self.n)
        kp[:], kd[:] = HAND_GAINS["transport"]
        pos = np.array(leader_angle, dtype=np.float64)
        for a, g in enumerate(self.g_idx):
            kp[g], kd[g] = HAND_GAINS["gripper"]
            if follower_angle is not None and self.detected_ms[a] is not None:
                pos[g] = follower_angle[g]
        return kp * (tgt - pos) + kd * (vel - leader_velocity)


def scripted_expert(scenario: Scenario, grasp_threshold: float | None = None) -> ScriptedExpert:
    return ScriptedExpert(scenario, grasp_threshold)
