"""Sensorless torque estimation: disturbance observer and reaction-force observer.

The disturbance observer low-passes ``tau_cmd - J_n * acc`` without
differentiating the velocity, using the usual pseudo-state
``p = LPF(tau_cmd + g J_n vel)``; its output is the negated lumped
disturbance. The reaction-force observer subtracts the modelled viscous
friction from it to recover the external torque.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .simcore import DT


@dataclass(frozen=True)
class ObserverConfig:
    cutoff: float = 100.0
    nominal_inertia: float = 0.01
    nominal_friction: float = 0.1

    def __post_init__(self):
        if not (self.cutoff > 0 and self.nominal_inertia > 0 and self.nominal_friction >= 0):
            raise ConfigurationError(f"invalid observer config: {self}")
        if self.cutoff * DT >= 1.0:
            raise ConfigurationError(f"cutoff {self.cutoff} rad/s is unstable at dt={DT}")


@dataclass
class ObserverState:
    lpf_state: float = 0.0
    disturbance: float = 0.0
    external: float = 0.0

    def reset(self):
        self.lpf_state = self.disturbance = self.external = 0.0


def dob_update(s: ObserverState, cfg: ObserverConfig, tau_cmd: float, velocity: float, dt: float = DT) -> ObserverState:
    g, jn = cfg.cutoff, cfg.nominal_inertia
    p = s.lpf_state + dt * g * (tau_cmd + g * jn * velocity - s.lpf_state)
    return ObserverState(p, p - g * jn * velocity, s.external)


def rfob_estimate(s: ObserverState, cfg: ObserverConfig, velocity: float) -> float:
    return cfg.nominal_friction * velocity - s.disturbance


class ObserverBank:
    """Vectorised DOB+RFOB over every joint of one robot.

    Runs the same update law as :func:`dob_update`/:func:`rfob_estimate`
    on arrays, which the 1 kHz loops need for speed.
    """

    def __init__(self, cutoff, nominal_inertia, nominal_friction):
        self.cutoff = np.asarray(cutoff, dtype=np.float64)
        self.inertia = np.asarray(nominal_inertia, dtype=np.float64)
        self.friction = np.asarray(nominal_friction, dtype=np.float64)
        if np.any(self.cutoff * DT >= 1.0) or np.any(self.cutoff <= 0):
            raise ConfigurationError("observer cutoff must satisfy 0 < g*dt < 1")
        n = self.inertia.shape
        self.p = np.zeros(n)
        self.disturbance = np.zeros(n)
        self.external = np.zeros(n)

    @classmethod
    def for_config(cls, world_config, cutoff=100.0, inertia_scale=1.0, friction_scale=1.0):
        inertia, friction = world_config.params[:2]
        return cls(np.full(inertia.shape, cutoff), inertia * inertia_scale, friction * friction_scale)

    def reset(self):
        self.p[:] = 0.0
        self.disturbance[:] = 0.0
        self.external[:] = 0.0

    def update(self, tau_cmd, velocity):
        gj = self.cutoff * self.inertia * velocity
        self.p = self.p + DT * self.cutoff * (tau_cmd + gj - self.p)
        self.disturbance = self.p - gj
        self.external = self.friction * velocity - self.disturbance
        return self.external

    def copy(self) -> "ObserverBank":
        b = ObserverBank(self.cutoff, self.inertia, self.friction)
        b.p, b.disturbance, b.external = self.p.copy(), self.disturbance.copy(), self.external.copy()
        return b
