"""How the chunk buffer behaves under different inference latencies.

A stand-in source replays a recorded leader trajectory, so no model is
needed. The default latency refills the buffer in time; pushing latency
past the refill slack starves the buffer and aborts the episode.

    python demos/executor_schedule.py
"""
from biact.executor import Executor, ReplaySource, ScheduleConfig, run_autonomous
from biact.harness.collect import record_demonstration
from biact.harness.tasks import get_task, sample_scenario


def main():
    task = get_task("pick")
    sc = sample_scenario(task, 5, 200.0)
    demo = record_demonstration(sc)

    ex = Executor(sc, ReplaySource(demo))
    for n in range(260):
        events = ex.tick()
        if set(events) - {"latch"}:
            print(f"tick {n:4d}: {', '.join(events)}  (buffer {ex.buffer.level})")

    print()
    for latency in (5.0, 14.3, 20.0, 25.0, 250.0):
        res = run_autonomous(task, ReplaySource(demo), 5, scenario=sc,
                             schedule=ScheduleConfig(inference_latency_ms=latency))
        state = "ok" if res.fault is None else res.fault
        print(f"latency {latency:6.1f} ms: {res.episode.n_samples:5d} ticks, place={res.success}, {state}")


if __name__ == "__main__":
    main()
