"""The 1 kHz teleoperation loop: observers, then the 4ch law, then the plant."""
from __future__ import annotations

import numpy as np

from .bilateral import BilateralGains, Side, fourch_commands
from .observers import ObserverBank
from .simcore import WorldState, step_world


class TeleopLoop:
    """Leader/follower pair under four-channel bilateral control.

    Each :meth:`step` updates both observer banks from the torques applied
    during the previous tick, snapshots the joint sextuple, computes the 4ch
    references, adds disturbance compensation (``tau_cmd = tau_ref + dob``)
    and advances the world, with ``operator_torque`` pushing on the leader.
    """

    def __init__(self, world: WorldState, gains: BilateralGains | None = None, cutoff: float = 100.0,
                 inertia_scale: float = 1.0, friction_scale: float = 1.0):
        self.world = world
        self.gains = gains or BilateralGains()
        cfg = world.config
        self.obs_l = ObserverBank.for_config(cfg, cutoff, inertia_scale, friction_scale)
        self.obs_f = ObserverBank.for_config(cfg, cutoff, inertia_scale, friction_scale)
        self.nominal_inertia = self.obs_l.inertia

    def observe(self):
        w = self.world
        tl = self.obs_l.update(w.leader.applied, w.leader.velocity)
        tf = self.obs_f.update(w.follower.applied, w.follower.velocity)
        return Side(w.leader.angle, w.leader.velocity, tl), Side(w.follower.angle, w.follower.velocity, tf)

    def step(self, operator_torque=None, sides=None):
        """Run one tick. Returns ``(t_us, values, cmd_l, cmd_f)``; ``values`` is (n_joints, 6).

        Pass ``sides`` when :meth:`observe` was already called for this tick,
        so the operator can react to the fresh estimates first.
        """
        t = self.world.sim_time_us
        leader, follower = sides if sides is not None else self.observe()
        values = np.stack([leader.angle, leader.velocity, leader.torque,
                           follower.angle, follower.velocity, follower.torque], axis=1)
        ref_l, ref_f = fourch_commands(leader, follower, self.gains, self.nominal_inertia)
        cmd_l = ref_l + self.obs_l.disturbance
        cmd_f = ref_f + self.obs_f.disturbance
        self.world = step_world(self.world, cmd_l, cmd_f, operator_torque)
        return t, values, cmd_l, cmd_f
