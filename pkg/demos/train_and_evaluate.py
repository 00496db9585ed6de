"""Collect, augment, train and evaluate, with and without the force inputs.

With the default configuration this takes roughly fifteen minutes on one
CPU core. Pass ``--quick`` for a tiny model that finishes in about a
minute (its success rates are not meaningful).

    python demos/train_and_evaluate.py [--quick]
"""
import sys
import tempfile
from dataclasses import replace

from biact.dabi import augment
from biact.datalog import read_episode
from biact.harness.collect import collect
from biact.harness.evaluate import evaluate
from biact.harness.tasks import get_task
from biact.policy import build_dataset, config_for_task, train


def main(quick=False):
    task = get_task("pick")
    with tempfile.TemporaryDirectory() as tmp:
        eps = [read_episode(p) for p in collect(task, 6, 0, tmp)]
    cfg = config_for_task(task)
    if quick:
        cfg = replace(cfg, model_dim=16, n_heads=2, ffn_dim=32, conv_channels=(4, 8, 8), epochs=1)
    data = build_dataset(augment(eps[:5], 10), cfg.k)
    held = build_dataset(augment(eps[5:], 10), cfg.k)
    print(f"{len(data)} training chunks from 5 demonstrations (50 DABI sequences)")

    for label, c in (("Bi-ACT", cfg), ("w/o force", replace(cfg, force_mask=True))):
        model, hist = train(data, c, heldout=held)
        print(f"\n{label}: held-out L1 {hist.heldout_l1[0]:.3f} -> {hist.heldout_l1[-1]:.3f} "
              f"in {hist.seconds:.0f} s")
        print(evaluate(model, task, 10, 7).table())


if __name__ == "__main__":
    main("--quick" in sys.argv[1:])
