import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biact.errors import ExecutionFault, UnderrunFault
from biact.executor import ChunkBuffer, Executor, ReplaySource, ScheduleConfig, run_autonomous
from biact.harness.collect import demo_quality
from biact.harness.tasks import Scenario


class ConstantSource:
    """Holds the start pose forever; cheap stand-in for a model."""

    def __init__(self, n_state, k=20, force=True, value=None):
        self.k, self.force = k, force
        self.value = np.zeros(n_state) if value is None else np.asarray(value, dtype=float)
        self.calls = []

    def __call__(self, t_us, frames, follower_state):
        self.calls.append(t_us)
        return np.tile(self.value, (self.k, 1))


def first_underrun_oracle(k, trigger, latency_ms, ticks, per_command=10):
    """Buffer level bookkeeping at integer-millisecond resolution; tick of the first empty latch or None."""
    arrival_delay = math.ceil(latency_ms - 1e-9)
    level, served, pending = k, 0, None
    for n in range(ticks):
        latch = n % per_command == 0
        if latch and pending is None and level <= trigger:
            pending = (n + arrival_delay, served)
        if pending is not None and n >= pending[0]:
            level = max(k - (served - pending[1]), 0)
            pending = None
        if latch:
            if level == 0:
                return n
            level -= 1
            served += 1
    return None


def start_pose(scenario):
    w = scenario.make_world()
    return np.stack([w.leader.angle, np.zeros_like(w.leader.angle), np.zeros_like(w.leader.angle)], 1).reshape(-1)


def demo_scenario(ep):
    return Scenario.from_meta(ep.header.meta)


def test_default_refill_lands_before_exhaustion():
    s = ScheduleConfig()
    assert s.latency_ticks == 15
    slack_ms = 1000.0 * s.refill_trigger / s.command_rate_hz - s.inference_latency_ms
    assert slack_ms == pytest.approx(5.7)
    assert s.underrun_free() and s.within_horizon(20)
    assert not ScheduleConfig(inference_latency_ms=250).within_horizon(20)


@settings(max_examples=12)
@given(latency=st.floats(0, 300), trigger=st.integers(0, 6))
def test_first_underrun_matches_schedule_oracle(pick_task, demos, latency, trigger):
    sc = demo_scenario(demos[50.0])
    sched = ScheduleConfig(inference_latency_ms=latency, refill_trigger=trigger)
    ticks = 600
    res = run_autonomous(pick_task, ConstantSource(6, value=start_pose(sc)), sc.seed, duration_ms=ticks,
                         scenario=sc, schedule=sched)
    want = first_underrun_oracle(20, trigger, latency, ticks)
    if want is None:
        assert res.fault is None and res.underruns == 0
        assert res.episode.n_samples == ticks
    else:
        assert res.underruns == 1 and "underrun" in res.fault
        assert res.episode.n_samples == want
    if latency <= 1000.0 * trigger / 100:
        assert want is None


def test_rate_law_trace(pick_task, demos):
    sc = demo_scenario(demos[50.0])
    ex = Executor(sc, ConstantSource(6, value=start_pose(sc)))
    events = [ex.tick() for _ in range(400)]
    latched = [n for n, ev in enumerate(events) if "latch" in ev]
    assert latched == list(range(0, 400, 10))
    assert ex.latch_ticks == latched
    assert ex.episode.n_samples == 400
    assert ex.world.sim_time_us == 400_000
    requests = [n for n, ev in enumerate(events) if "request" in ev]
    arrivals = [n for n, ev in enumerate(events) if "arrive" in ev]
    assert len(requests) == len(arrivals)
    assert all(a - r == 15 for r, a in zip(requests, arrivals))
    # one row consumed per 10 ms: a chunk of 20 lasts 200 ms, first refill at level 2
    assert requests[0] == 180


def test_thirty_seconds_zero_underruns(pick_task, demos):
    ep = demos[200.0]
    res = run_autonomous(pick_task, ReplaySource(ep), 0, duration_ms=30_000, scenario=demo_scenario(ep))
    assert res.fault is None and res.underruns == 0
    assert np.array_equal(res.latch_ticks, np.arange(0, 30_000, 10))


def test_forced_latency_gives_exactly_one_underrun(pick_task, demos):
    ep = demos[50.0]
    res = run_autonomous(pick_task, ReplaySource(ep), 0, scenario=demo_scenario(ep),
                         schedule=ScheduleConfig(inference_latency_ms=250.0))
    assert res.underruns == 1
    assert res.fault and "underrun" in res.fault
    assert res.phases == {"pick": False, "move": False, "place": False}
    assert res.episode.header.meta["fault"] == res.fault


@pytest.mark.parametrize("k_obj", [50.0, 200.0, 500.0])
def test_replayed_expert_succeeds_through_bridge(pick_task, demos, k_obj):
    ep = demos[k_obj]
    res = run_autonomous(pick_task, ReplaySource(ep), 0, scenario=demo_scenario(ep))
    assert res.success and res.fault is None
    demo_rms = demo_quality(ep).pos_err_rms
    assert np.sqrt(np.mean(res.pos_err ** 2)) <= 1.1 * demo_rms


def test_result_bytes_deterministic(pick_task, demos):
    ep = demos[500.0]
    a = run_autonomous(pick_task, ReplaySource(ep), 0, duration_ms=800, scenario=demo_scenario(ep))
    b = run_autonomous(pick_task, ReplaySource(ep), 0, duration_ms=800, scenario=demo_scenario(ep))
    assert a.to_bytes() == b.to_bytes()


def test_position_only_ignores_torque_columns(pick_task, demos):
    ep = demos[200.0]
    sc = demo_scenario(ep)
    plain = ReplaySource(ep, force=False)
    noisy = ReplaySource(ep, force=False)
    noisy.rows = noisy.rows.copy()
    noisy.rows[:, 2::3] += np.random.default_rng(0).normal(size=noisy.rows[:, 2::3].shape)
    a = run_autonomous(pick_task, plain, 0, duration_ms=1500, scenario=sc)
    b = run_autonomous(pick_task, noisy, 0, duration_ms=1500, scenario=sc)
    assert a.episode.follower_states().tobytes() == b.episode.follower_states().tobytes()


def test_non_finite_chunk_is_a_fault(pick_task, demos):
    sc = demo_scenario(demos[50.0])
    bad = ConstantSource(6, value=np.full(6, np.nan))
    res = run_autonomous(pick_task, bad, 0, duration_ms=100, scenario=sc)
    assert res.fault and "non-finite" in res.fault and res.underruns == 0


def test_chunk_buffer_fifo_and_errors():
    buf = ChunkBuffer(3, 2)
    with pytest.raises(UnderrunFault):
        buf.pop()
    buf.load(np.arange(6.0).reshape(3, 2))
    assert buf.pop().tolist() == [0.0, 1.0]
    buf.load(np.arange(6.0).reshape(3, 2) + 10, drop=1)
    assert buf.level == 2 and buf.pop().tolist() == [12.0, 13.0]
    with pytest.raises(ExecutionFault):
        buf.load(np.zeros((2, 2)))
