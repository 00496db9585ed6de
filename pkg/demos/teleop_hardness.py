"""Scripted teleoperation across the hardness ladder.

Records one demonstration per object stiffness and prints the steady
gripper torque, plus the tracking quality of the four-channel coupling.
The operator squeezes a fixed angle past the point of contact, so stiffer
objects push back harder and the torque column grows with K_obj.

    python demos/teleop_hardness.py
"""
import numpy as np

from biact.harness.analysis import steady_torque
from biact.harness.collect import demo_quality, record_demonstration
from biact.harness.tasks import get_task, judge_phases, sample_scenario


def main():
    task = get_task("pick")
    print(f"{'K_obj':>6} {'torque':>7} {'pos err':>9} {'force sum':>9}  phases")
    for k in task.stiffness_ladder:
        ep = record_demonstration(sample_scenario(task, 11, k))
        q = demo_quality(ep)
        ph = judge_phases(task, ep.debug["grasped"], ep.debug["object_x"]).as_dict()
        done = " ".join(name for name, ok in ph.items() if ok)
        print(f"{k:6.0f} {steady_torque(ep):7.3f} {q.pos_err_rms:9.2e} {q.force_sum_rms_contact:9.2e}  {done}")
    lead = ep.sample_values[:, 1, 2]
    follow = ep.sample_values[:, 1, 5]
    print(f"\nlast episode, gripper: mean tau_l {np.mean(lead):+.3f}, mean tau_f {np.mean(follow):+.3f}")


if __name__ == "__main__":
    main()
