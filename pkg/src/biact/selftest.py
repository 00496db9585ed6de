"""Controller and observer checks that run end to end in a few seconds.

Each check builds its own scenario, runs the real teleoperation loop and
compares against a closed-form or ground-truth oracle.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .observers import ObserverBank, ObserverConfig, ObserverState, dob_update
from .simcore import DT, ContactObject, JointParams, JointState, WorldConfig, make_world, step_joint, step_world
from .teleop import TeleopLoop


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.4g} (limit {self.limit:.4g})"
                f"{'  ' + self.detail if self.detail else ''}")


def tracking_run(duration_s: float = 5.0, freq_hz: float = 0.5, amp: float = 0.5, hand=(30.0, 2.0)):
    """Hand drives the leader along a sinusoid; returns (t, theta_l, theta_f) for every joint."""
    cfg = WorldConfig(n_arms=1)
    start = np.array([0.0, 0.5])
    loop = TeleopLoop(make_world(cfg, [], start))
    n = int(round(duration_s / DT))
    t = np.arange(n) * DT
    w = 2 * np.pi * freq_hz
    target = np.stack([amp * np.sin(w * t), 0.5 + 0.9 * amp * np.sin(w * t)], axis=1)
    target_v = np.stack([amp * w * np.cos(w * t), 0.9 * amp * w * np.cos(w * t)], axis=1)
    thl = np.empty((n, 2))
    thf = np.empty((n, 2))
    kp, kd = hand
    for i in range(n):
        wl = loop.world.leader
        thl[i], thf[i] = wl.angle, loop.world.follower.angle
        loop.step(kp * (target[i] - wl.angle) + kd * (target_v[i] - wl.velocity))
    return t, thl, thf


def check_tracking(limit: float = 0.01) -> CheckResult:
    t0 = time.perf_counter()
    t, thl, thf = tracking_run()
    e = (thl - thf)[t >= 1.0]
    rms = float(np.sqrt(np.mean(e ** 2)))
    return CheckResult("bilateral tracking RMS(theta_l - theta_f) [rad]", rms < limit, rms, limit,
                       seconds=time.perf_counter() - t0)


def press_run(push: float = 0.5, stiffness: float = 500.0, duration_s: float = 1.5, cutoff: float = 100.0):
    """Operator squeezes the leader gripper while the follower closes on a stiff object.

    Returns per-tick arrays (tau_hat_l, tau_hat_f, tau_ext_true_f) for the gripper joint.
    """
    cfg = WorldConfig(n_arms=1)
    obj = ContactObject(position=0.0, radius=0.08, stiffness=stiffness)
    start = np.array([0.0, obj.contact_angle - 0.02])
    loop = TeleopLoop(make_world(cfg, [obj], start), cutoff=cutoff)
    g = cfg.gripper_index(0)
    n = int(round(duration_s / DT))
    out = np.empty((n, 3))
    op = np.zeros(cfg.n_joints)
    op[g] = push
    for i in range(n):
        _, values, _, _ = loop.step(op)
        out[i] = values[g, 2], values[g, 5], loop.world.follower.external[g]
    return out


def check_action_reaction(limit: float = 0.05) -> CheckResult:
    t0 = time.perf_counter()
    run = press_run()
    tl, tf = run[-200:, 0].mean(), run[-200:, 1].mean()
    ratio = abs(tl + tf) / abs(tf)
    ok = ratio < limit and np.sign(tl) == -np.sign(tf) and tf != 0
    return CheckResult("action-reaction |tau_l + tau_f| / |tau_f|", bool(ok), float(ratio), limit,
                       f"tau_l={tl:+.4f} tau_f={tf:+.4f}", time.perf_counter() - t0)


def contact_hold_run(push: float = 0.5, stiffness: float = 200.0, duration_s: float = 0.3, cutoff: float = 100.0):
    """Follower gripper held against an object by a constant command, starting at static equilibrium.

    Returns per-tick (estimate, true external torque) for the gripper joint.
    """
    cfg = WorldConfig(n_arms=1)
    obj = ContactObject(position=0.0, radius=0.08, stiffness=stiffness)
    start = np.array([0.0, obj.contact_angle + push / stiffness])
    w = make_world(cfg, [obj], start)
    obs = ObserverBank.for_config(cfg, cutoff)
    g = cfg.gripper_index(0)
    cmd = np.zeros(cfg.n_joints)
    cmd[g] = push
    n = int(round(duration_s / DT))
    out = np.empty((n, 2))
    for i in range(n):
        w = step_world(w, np.zeros(cfg.n_joints), cmd)
        out[i] = obs.update(w.follower.applied, w.follower.velocity)[g], w.follower.external[g]
    return out


def check_rfob(limit: float = 0.05, cutoff: float = 100.0) -> CheckResult:
    t0 = time.perf_counter()
    run = contact_hold_run(cutoff=cutoff)
    settle = int(np.ceil(5.0 / cutoff / DT))
    est, true = run[settle:, 0], run[settle:, 1]
    err = float(np.max(np.abs(est - true) / np.abs(true)))
    return CheckResult("RFOB relative error after 5/g", err < limit, err, limit, seconds=time.perf_counter() - t0)


def dob_step_response(cutoff: float = 50.0, step: float = 0.2, duration_s: float = 0.2):
    """Disturbance step on a joint held still by the plant; returns (t, estimate, first-order reference)."""
    cfg = ObserverConfig(cutoff=cutoff)
    s = ObserverState()
    n = int(round(duration_s / DT))
    est = np.empty(n)
    for i in range(n):
        s = dob_update(s, cfg, -step, 0.0)
        est[i] = -s.disturbance
    t = (np.arange(n) + 1) * DT
    return t, est, step * (1.0 - np.exp(-cutoff * t))


def check_dob_step(limit: float = 0.02) -> CheckResult:
    t, est, ref = dob_step_response()
    dev = float(np.max(np.abs(est - ref)) / 0.2)
    mono = bool(np.all(np.diff(est) >= 0))
    return CheckResult("DOB step deviation from first-order response", dev < limit and mono, dev, limit,
                       "" if mono else "not monotone")


def check_step_joint() -> CheckResult:
    p = JointParams(inertia=0.01, friction=0.0, torque_limit=5.0, angle_limits=(-10.0, 10.0))
    s = step_joint(JointState(0.0, 0.0, 0.1, 0.0), p)
    err = abs(s.velocity - 0.01) + abs(s.angle - 1e-5)
    return CheckResult("semi-implicit Euler hand example", err < 1e-15, err, 1e-15)


CHECKS = (check_step_joint, check_dob_step, check_tracking, check_action_reaction, check_rfob)


def run_selftest() -> list[CheckResult]:
    return [c() for c in CHECKS]
