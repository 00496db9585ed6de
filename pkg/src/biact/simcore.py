"""Per-joint rigid-body simulation of leader/follower arms at a fixed 1 ms step.

Each arm is a chain of decoupled joints. By convention joint 0 of an arm is
the transport joint (its angle is the gripper position along the task line,
one task unit per radian) and the last joint is the gripper. The gripper
angle is a *closure* angle: 0 is fully open and positive torque closes it.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DimensionError, SimulationIntegrityError

DT = 1e-3
STEP_US = 1000
JAW_GAP_OPEN = 0.4  # task units between the jaws at closure 0

BACKGROUND = (96, 96, 96)
PLACE_COLOR = (40, 160, 40)
JAW_COLOR = (30, 30, 200)
OBJECT_COLOR = (220, 60, 40)


@dataclass(frozen=True)
class JointParams:
    inertia: float
    friction: float
    torque_limit: float
    angle_limits: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.angle_limits
        if not (self.inertia > 0 and self.friction >= 0 and self.torque_limit > 0 and lo < hi):
            raise ConfigurationError(f"invalid joint parameters: {self}")


TRANSPORT_JOINT = JointParams(inertia=0.02, friction=0.2, torque_limit=5.0, angle_limits=(-1.2, 1.2))
GRIPPER_JOINT = JointParams(inertia=0.01, friction=0.1, torque_limit=3.0, angle_limits=(0.0, 1.0))


@dataclass
class JointState:
    angle: float
    velocity: float = 0.0
    applied_torque: float = 0.0
    external_torque: float = 0.0


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise SimulationIntegrityError(f"non-finite simulation input: {values}")


def step_joint(state: JointState, params: JointParams, dt: float = DT) -> JointState:
    """Advance one joint by one semi-implicit Euler step."""
    if dt != DT:
        raise ConfigurationError(f"the plant runs at a fixed step of {DT} s, got {dt}")
    _check_finite(state.angle, state.velocity, state.applied_torque, state.external_torque)
    tau = min(max(state.applied_torque, -params.torque_limit), params.torque_limit)
    vel = state.velocity + dt * (tau + state.external_torque - params.friction * state.velocity) / params.inertia
    ang = state.angle + dt * vel
    lo, hi = params.angle_limits
    if ang < lo or ang > hi:
        ang = min(max(ang, lo), hi)
        vel = 0.0
    return JointState(ang, vel, tau, state.external_torque)


@dataclass
class ContactObject:
    position: float
    radius: float
    stiffness: float
    damping: float = 0.2
    mass: float = 0.05
    grasped: bool = False
    arm: int = 0
    low_force_ms: int = 0

    def __post_init__(self):
        if not (self.stiffness > 0 and self.damping >= 0 and self.radius > 0):
            raise ConfigurationError(f"invalid contact object: {self}")

    @property
    def contact_angle(self) -> float:
        """Gripper closure at which the jaws touch the object surface."""
        return 1.0 - 2.0 * self.radius / JAW_GAP_OPEN


def jaw_gap(closure):
    return JAW_GAP_OPEN * (1.0 - closure)


def contact_torque(gripper: JointState, obj: ContactObject) -> float:
    """Spring-damper reaction of ``obj`` on a closing gripper (never adhesive)."""
    penetration = gripper.angle - obj.contact_angle
    if penetration <= 0.0:
        return 0.0
    tau = -obj.stiffness * penetration - obj.damping * gripper.velocity
    return min(tau, 0.0)


@dataclass
class RobotState:
    angle: np.ndarray
    velocity: np.ndarray
    applied: np.ndarray
    external: np.ndarray

    @classmethod
    def at(cls, angles):
        a = np.array(angles, dtype=np.float64)
        return cls(a, np.zeros_like(a), np.zeros_like(a), np.zeros_like(a))

    def joint(self, i: int) -> JointState:
        return JointState(float(self.angle[i]), float(self.velocity[i]),
                          float(self.applied[i]), float(self.external[i]))

    def copy(self) -> "RobotState":
        return RobotState(self.angle.copy(), self.velocity.copy(), self.applied.copy(), self.external.copy())


@dataclass(frozen=True)
class WorldConfig:
    n_arms: int = 1
    joints: tuple[JointParams, ...] = (TRANSPORT_JOINT, GRIPPER_JOINT)
    grasp_threshold: float = 0.3
    capture_tolerance: float = 0.08
    drop_delay_ms: int = 50
    place_regions: tuple[tuple[float, float], ...] = ((0.4, 0.8),)
    image_size: tuple[int, int] = (32, 32)  # (width, height)

    def __post_init__(self):
        if self.n_arms < 1 or len(self.joints) < 2:
            raise ConfigurationError("need at least one arm with a transport and a gripper joint")
        if len(self.place_regions) != self.n_arms:
            raise ConfigurationError("one place region per arm is required")

    @property
    def joints_per_arm(self) -> int:
        return len(self.joints)

    @property
    def n_joints(self) -> int:
        return self.n_arms * len(self.joints)

    @property
    def n_cameras(self) -> int:
        return 1 + self.n_arms

    def transport_index(self, arm: int) -> int:
        return arm * self.joints_per_arm

    def gripper_index(self, arm: int) -> int:
        return arm * self.joints_per_arm + self.joints_per_arm - 1

    @cached_property
    def params(self):
        per = self.joints * self.n_arms
        inertia = np.array([p.inertia for p in per])
        friction = np.array([p.friction for p in per])
        limit = np.array([p.torque_limit for p in per])
        lo = np.array([p.angle_limits[0] for p in per])
        hi = np.array([p.angle_limits[1] for p in per])
        return inertia, friction, limit, lo, hi


@dataclass
class WorldState:
    config: WorldConfig
    leader: RobotState
    follower: RobotState
    objects: list[ContactObject] = field(default_factory=list)
    sim_time_us: int = 0
    rng_seed: int = 0
    saturation_count: int = 0
    grasp_force: np.ndarray | None = None  # per arm, from the last step

    def copy(self) -> "WorldState":
        return WorldState(self.config, self.leader.copy(), self.follower.copy(),
                          [copy.copy(o) for o in self.objects], self.sim_time_us,
                          self.rng_seed, self.saturation_count,
                          None if self.grasp_force is None else self.grasp_force.copy())

    def gripper_x(self, arm: int) -> float:
        return float(self.follower.angle[self.config.transport_index(arm)])


def make_world(config: WorldConfig, objects=(), start_angles=None, seed: int = 0) -> WorldState:
    if start_angles is None:
        start_angles = np.zeros(config.n_joints)
    start_angles = np.asarray(start_angles, dtype=np.float64)
    if start_angles.shape != (config.n_joints,):
        raise DimensionError(f"start angles shape {start_angles.shape} != ({config.n_joints},)")
    for o in objects:
        if not 0 <= o.arm < config.n_arms:
            raise ConfigurationError(f"object assigned to missing arm {o.arm}")
    return WorldState(config, RobotState.at(start_angles), RobotState.at(start_angles),
                      [copy.copy(o) for o in objects], 0, seed, 0, np.zeros(config.n_arms))


def _integrate(robot: RobotState, tau_cmd, tau_ext, params):
    inertia, friction, limit, lo, hi = params
    tau = np.clip(tau_cmd, -limit, limit)
    vel = robot.velocity + DT * (tau + tau_ext - friction * robot.velocity) / inertia
    ang = robot.angle + DT * vel
    out = (ang < lo) | (ang > hi)
    if out.any():
        ang = np.clip(ang, lo, hi)
        vel = np.where(out, 0.0, vel)
    robot.angle, robot.velocity, robot.applied, robot.external = ang, vel, tau, np.asarray(tau_ext, dtype=np.float64)
    return int(np.count_nonzero(np.abs(tau_cmd) > limit))


def step_world(w: WorldState, leader_cmds, follower_cmds, leader_external=None) -> WorldState:
    """Advance the world by one 1 ms tick and return the new state.

    ``leader_external`` is the torque applied by the operator's hand on the
    leader joints (zeros when absent).
    """
    cfg = w.config
    n = cfg.n_joints
    leader_cmds = np.asarray(leader_cmds, dtype=np.float64)
    follower_cmds = np.asarray(follower_cmds, dtype=np.float64)
    ext_l = np.zeros(n) if leader_external is None else np.asarray(leader_external, dtype=np.float64)
    if leader_cmds.shape != (n,) or follower_cmds.shape != (n,) or ext_l.shape != (n,):
        raise DimensionError(
            f"command shapes {leader_cmds.shape}, {follower_cmds.shape}, {ext_l.shape} do not match ({n},)")
    _check_finite(leader_cmds, follower_cmds, ext_l)

    nw = w.copy()
    params = cfg.params
    f = nw.follower
    ext_f = np.zeros(n)
    grasp = np.zeros(cfg.n_arms)
    in_jaws = set()
    for k, obj in enumerate(nw.objects):
        g = cfg.gripper_index(obj.arm)
        if obj.grasped or abs(f.angle[cfg.transport_index(obj.arm)] - obj.position) <= cfg.capture_tolerance:
            tau = contact_torque(JointState(f.angle[g], f.velocity[g]), obj)
            ext_f[g] += tau
            grasp[obj.arm] += -tau
            in_jaws.add(k)
        if obj.grasped:
            ext_f[cfg.transport_index(obj.arm)] -= obj.mass * f.velocity[cfg.transport_index(obj.arm)]

    x_before = np.array([f.angle[cfg.transport_index(a)] for a in range(cfg.n_arms)])
    sat = _integrate(nw.leader, leader_cmds, ext_l, params)
    sat += _integrate(f, follower_cmds, ext_f, params)
    nw.saturation_count += sat

    for k, obj in enumerate(nw.objects):
        dx = f.angle[cfg.transport_index(obj.arm)] - x_before[obj.arm]
        force = grasp[obj.arm] if k in in_jaws else 0.0
        if obj.grasped:
            obj.position += dx
            if force < cfg.grasp_threshold:
                obj.low_force_ms += 1
                if obj.low_force_ms > cfg.drop_delay_ms:
                    obj.grasped = False
                    obj.low_force_ms = 0
            else:
                obj.low_force_ms = 0
        elif k in in_jaws and force >= cfg.grasp_threshold:
            obj.grasped = True
            obj.low_force_ms = 0
    nw.grasp_force = grasp
    nw.sim_time_us += STEP_US
    _check_finite(f.angle, f.velocity, nw.leader.angle, nw.leader.velocity)
    return nw


def _disc(img, rows, cols, cy, cx, radius_px, color):
    mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius_px ** 2
    img[mask] = color


def _bar(img, col, r0, r1, color):
    w = img.shape[1]
    if 0 <= col < w:
        img[max(r0, 0):max(r1, 0), col] = color


def render_camera(w: WorldState, cam_id: int) -> np.ndarray:
    """Rasterize camera ``cam_id`` to an (H, W, 3) uint8 image.

    Camera 0 looks down on every arm (one horizontal band per arm); camera
    ``1 + a`` is mounted on follower gripper ``a`` at twice the zoom.
    Object colour never depends on stiffness.
    """
    cfg = w.config
    if not 0 <= cam_id < cfg.n_cameras:
        raise ConfigurationError(f"camera id {cam_id} out of range (have {cfg.n_cameras})")
    width, height = cfg.image_size
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    rows, cols = np.ogrid[:height, :width]
    g_idx = [cfg.gripper_index(a) for a in range(cfg.n_arms)]

    if cam_id == 0:
        scale = width / 2.0
        band = height // cfg.n_arms
        arms = range(cfg.n_arms)
        to_col = [lambda x: x * scale + width / 2.0] * cfg.n_arms
        bands = [(a * band, (a + 1) * band) for a in arms]
    else:
        arm = cam_id - 1
        scale = float(width)
        xg = w.gripper_x(arm)
        arms = [arm]
        to_col = {arm: (lambda x, xg=xg: (x - xg) * scale + width / 2.0)}
        bands = {arm: (0, height)}

    for a in arms:
        r0, r1 = bands[a]
        cy = (r0 + r1) // 2
        lo, hi = cfg.place_regions[a]
        c0 = int(round(to_col[a](lo)))
        c1 = int(round(to_col[a](hi)))
        c0, c1 = max(c0, 0), min(c1, width)
        if c1 > c0:
            img[r1 - 2:r1, c0:c1] = PLACE_COLOR
        xg = w.gripper_x(a)
        gap = jaw_gap(w.follower.angle[g_idx[a]])
        jaw_half = max(1, (r1 - r0) * 3 // 10)
        for side in (-0.5, 0.5):
            _bar(img, int(round(to_col[a](xg + side * gap))), cy - jaw_half, cy + jaw_half + 1, JAW_COLOR)
        for obj in w.objects:
            if obj.arm == a:
                _disc(img, rows, cols, cy, int(round(to_col[a](obj.position))), obj.radius * scale, OBJECT_COLOR)
    return img


def kinetic_energy(robot: RobotState, config: WorldConfig) -> float:
    inertia = config.params[0]
    return float(0.5 * np.sum(inertia * robot.velocity ** 2))


__all__ = [
    "DT", "STEP_US", "JointParams", "JointState", "ContactObject", "RobotState", "WorldConfig",
    "WorldState", "TRANSPORT_JOINT", "GRIPPER_JOINT", "step_joint", "contact_torque", "step_world",
    "render_camera", "make_world", "jaw_gap", "kinetic_energy",
]
