import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biact.errors import ConfigurationError, DimensionError, SimulationIntegrityError
from biact.simcore import (DT, GRIPPER_JOINT, ContactObject, JointParams, JointState, WorldConfig,
                           contact_torque, kinetic_energy, make_world, render_camera, step_joint, step_world)


def free_params(friction=0.0):
    return JointParams(inertia=0.01, friction=friction, torque_limit=5.0, angle_limits=(-100.0, 100.0))


def test_step_joint_equilibrium_is_fixed_point():
    s = JointState(0.3, 0.0, 0.0, 0.0)
    out = step_joint(s, free_params(0.2))
    assert (out.angle, out.velocity) == (0.3, 0.0)


def test_step_joint_hand_evaluation():
    out = step_joint(JointState(0.0, 0.0, 0.1, 0.0), free_params())
    assert out.velocity == pytest.approx(0.01, abs=1e-15)
    assert out.angle == pytest.approx(1e-5, abs=1e-18)


def test_constant_torque_reaches_terminal_velocity():
    # closed form: v(t) = (tau/D) (1 - exp(-D t / J)); within 1% after 5 J / D
    p = JointParams(inertia=0.02, friction=0.4, torque_limit=5.0, angle_limits=(-100.0, 100.0))
    s = JointState(0.0, 0.0, 0.2, 0.0)
    for _ in range(int(np.ceil(5 * p.inertia / p.friction / DT))):
        s = step_joint(s, p)
    assert abs(s.velocity - 0.2 / 0.4) / 0.5 < 0.01


def test_step_joint_rejects_other_dt_and_nan():
    with pytest.raises(ConfigurationError):
        step_joint(JointState(0.0), free_params(), dt=2e-3)
    with pytest.raises(SimulationIntegrityError):
        step_joint(JointState(float("nan")), free_params())


def test_contact_torque_examples():
    obj = ContactObject(position=0.0, radius=0.08, stiffness=200.0, damping=0.2)
    assert contact_torque(JointState(obj.contact_angle - 0.1, 0.0), obj) == 0.0
    assert contact_torque(JointState(obj.contact_angle + 0.05, 0.0), obj) == pytest.approx(-10.0)
    soft = contact_torque(JointState(obj.contact_angle + 0.03, 0.0), obj)
    hard = contact_torque(JointState(obj.contact_angle + 0.03, 0.0),
                          ContactObject(position=0.0, radius=0.08, stiffness=400.0))
    assert hard == pytest.approx(2 * soft)


@given(pen=st.floats(1e-6, 0.5), vel=st.floats(-5, 5), k=st.floats(1, 1000))
def test_contact_is_resistive(pen, vel, k):
    obj = ContactObject(position=0.0, radius=0.08, stiffness=k)
    tau = contact_torque(JointState(obj.contact_angle + pen, vel), obj)
    assert tau <= 0.0
    # a resistive torque can only slow a closing gripper down
    p = GRIPPER_JOINT
    out = step_joint(JointState(0.5, vel, 0.0, tau), JointParams(p.inertia, 0.0, p.torque_limit, (-10, 10)))
    assert out.velocity <= vel + 1e-15


@given(v0=st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_unforced_kinetic_energy_never_increases(v0):
    cfg = WorldConfig()
    w = make_world(cfg, [], [0.0, 0.5])
    w.follower.velocity = np.array(v0, dtype=float)
    e = kinetic_energy(w.follower, cfg)
    for _ in range(50):
        w = step_world(w, np.zeros(2), np.zeros(2))
        e_next = kinetic_energy(w.follower, cfg)
        assert e_next <= e + 1e-15
        e = e_next


@given(cmds=st.lists(st.floats(-50, 50), min_size=40, max_size=40))
def test_angle_limits_hold(cmds):
    cfg = WorldConfig()
    w = make_world(cfg, [], [0.0, 0.5])
    lo, hi = cfg.params[3], cfg.params[4]
    for c in cmds:
        w = step_world(w, np.array([c, -c]), np.array([-c, c]))
        for r in (w.leader, w.follower):
            assert np.all(r.angle >= lo) and np.all(r.angle <= hi)


def test_zero_commands_only_advance_time():
    w = make_world(WorldConfig(), [], [0.1, 0.2])
    nw = step_world(w, np.zeros(2), np.zeros(2))
    assert nw.sim_time_us == 1000
    np.testing.assert_array_equal(nw.follower.angle, w.follower.angle)
    np.testing.assert_array_equal(nw.leader.angle, w.leader.angle)


def drop_oracle(forces, threshold, delay):
    """Tick at which a grasped object is released, tracing the low-force rule by hand."""
    low = 0
    for t, f in enumerate(forces):
        low = low + 1 if f < threshold else 0
        if low > delay:
            return t
    return None


def test_grasp_dropped_after_50ms_of_low_force():
    cfg = WorldConfig()
    obj = ContactObject(position=0.0, radius=0.08, stiffness=200.0, grasped=True)
    w = make_world(cfg, [obj], [0.0, obj.contact_angle + 0.01])
    hold = np.array([0.0, 2.0])
    for _ in range(30):
        w = step_world(w, np.zeros(2), hold)
    assert w.objects[0].grasped
    # release: the gripper opens, grasp force falls to zero
    forces, flags = [], []
    for _ in range(120):
        w = step_world(w, np.zeros(2), np.array([0.0, -3.0]))
        forces.append(w.grasp_force[0])
        flags.append(w.objects[0].grasped)
    expect = drop_oracle(forces, cfg.grasp_threshold, cfg.drop_delay_ms)
    assert expect is not None
    assert flags[expect] is False and all(flags[:expect])


def run_stream(seed, cmds):
    obj = ContactObject(position=0.0, radius=0.08, stiffness=500.0)
    w = make_world(WorldConfig(), [obj], [0.0, 0.4], seed=seed)
    out = []
    for c in cmds:
        w = step_world(w, c, -c)
        out.append((w.follower.angle.tobytes(), render_camera(w, 1).tobytes()))
    return out


def test_determinism_bitwise():
    cmds = np.random.default_rng(5).normal(size=(200, 2))
    assert run_stream(3, cmds) == run_stream(3, cmds)


def test_step_world_shape_check():
    w = make_world(WorldConfig())
    with pytest.raises(DimensionError):
        step_world(w, np.zeros(3), np.zeros(2))


def test_render_empty_world_is_background():
    cfg = WorldConfig(place_regions=((5.0, 6.0),))
    w = make_world(cfg, [], [0.0, 0.0])
    w.follower.angle[:] = [3.0, 0.0]  # jaws off-screen for the overhead camera
    a = render_camera(w, 0)
    assert a.shape == (32, 32, 3) and a.dtype == np.uint8
    assert a.tobytes() == render_camera(w, 0).tobytes()
    assert np.all(a == np.array([96, 96, 96], dtype=np.uint8))


def disc_centroid(img, color=(220, 60, 40)):
    mask = np.all(img == np.array(color, dtype=np.uint8), axis=-1)
    rows, cols = np.nonzero(mask)
    return cols.mean()


def test_render_object_shift_moves_centroid():
    cfg = WorldConfig()
    scale = cfg.image_size[0] / 2.0
    dx = 0.125
    base = make_world(cfg, [ContactObject(position=-0.3, radius=0.08, stiffness=50.0)], [0.5, 0.0])
    moved = make_world(cfg, [ContactObject(position=-0.3 + dx, radius=0.08, stiffness=50.0)], [0.5, 0.0])
    shift = disc_centroid(render_camera(moved, 0)) - disc_centroid(render_camera(base, 0))
    assert shift == pytest.approx(round(dx * scale))


def test_hardness_is_invisible():
    cfg = WorldConfig()
    a = make_world(cfg, [ContactObject(position=-0.2, radius=0.08, stiffness=50.0)], [-0.2, 0.3])
    b = make_world(cfg, [ContactObject(position=-0.2, radius=0.08, stiffness=500.0)], [-0.2, 0.3])
    for cam in range(cfg.n_cameras):
        assert render_camera(a, cam).tobytes() == render_camera(b, cam).tobytes()


def test_bad_config_rejected():
    with pytest.raises(ConfigurationError):
        JointParams(inertia=0.0, friction=0.1, torque_limit=1.0, angle_limits=(0, 1))
    with pytest.raises(ConfigurationError):
        ContactObject(position=0.0, radius=0.08, stiffness=-1.0)
    with pytest.raises(ConfigurationError):
        render_camera(make_world(WorldConfig()), 7)
