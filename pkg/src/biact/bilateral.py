"""Four-channel bilateral control law and its position-only ablation.

All torques are *applied* torques: the estimates passed in are what the
reaction-force observers return, i.e. the torque the operator or the
environment exerts on the joint. With that convention the two control goals
are ``theta_l - theta_f -> 0`` and ``tau_l + tau_f -> 0``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError


class Side(NamedTuple):
    angle: np.ndarray
    velocity: np.ndarray
    torque: np.ndarray


@dataclass(frozen=True)
class BilateralGains:
    kp: float = 400.0
    kd: float = 40.0
    kf: float = 1.0
    joint_scale: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not (self.kp > 0 and self.kd > 0 and self.kf >= 0):
            raise ConfigurationError(f"invalid bilateral gains: {self}")
        if self.kd ** 2 < 4 * self.kp:
            warnings.warn(f"position loop is underdamped (Kd^2={self.kd ** 2} < 4Kp={4 * self.kp})")

    def scale(self, n):
        if not self.joint_scale:
            return 1.0
        s = np.asarray(self.joint_scale, dtype=np.float64)
        if s.shape != (n,):
            raise ConfigurationError(f"joint_scale has {s.size} entries for {n} joints")
        return s


def _arr(x):
    return np.asarray(x, dtype=np.float64)


def fourch_commands(leader: Side, follower: Side, gains: BilateralGains, nominal_inertia):
    """Torque references ``(tau_ref_l, tau_ref_f)`` before disturbance compensation.

    The position part pulls the two robots together with opposite signs; the
    force part is common to both and drives ``tau_l + tau_f`` to zero.
    """
    e = _arr(leader.angle) - _arr(follower.angle)
    de = _arr(leader.velocity) - _arr(follower.velocity)
    f = _arr(leader.torque) + _arr(follower.torque)
    jn = _arr(nominal_inertia)
    s = gains.scale(e.size)
    pos = 0.5 * jn * s * (gains.kp * e + gains.kd * de)
    force = 0.5 * gains.kf * f
    return -pos + force, pos + force


def goal_errors(leader: Side, follower: Side):
    """Residuals of the two bilateral goals: (angle difference, torque sum)."""
    return _arr(leader.angle) - _arr(follower.angle), _arr(leader.torque) + _arr(follower.torque)


def position_only_commands(predicted_leader: Side, follower: Side, gains: BilateralGains, nominal_inertia):
    e = _arr(predicted_leader.angle) - _arr(follower.angle)
    de = _arr(predicted_leader.velocity) - _arr(follower.velocity)
    return _arr(nominal_inertia) * gains.scale(e.size) * (gains.kp * e + gains.kd * de)
