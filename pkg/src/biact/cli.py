"""Command line: collect | augment | train | eval | replay | gradcheck | selftest."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import BiactError, ConfigurationError, SimulationIntegrityError

log = logging.getLogger("biact")

IO_EXIT = 9

TRAIN_KEYS = {"k": int, "latent_dim": int, "model_dim": int, "n_heads": int, "enc_layers": int, "dec_layers": int,
              "ffn_dim": int, "conv_channels": tuple, "beta": float, "lr": float, "epochs": int, "batch_size": int,
              "seed": int, "force_mask": bool, "factor": int}


def _load_sequences(data: Path, factor: int):
    from .dabi import MANIFEST, augment, load_manifest
    from .datalog import read_episode
    if data.is_file():
        return load_manifest(data)
    if (data / MANIFEST).exists():
        return load_manifest(data / MANIFEST)
    files = sorted(data.glob("*.biep"))
    if not files:
        raise ConfigurationError(f"{data}: no manifest and no .biep episodes")
    return augment([read_episode(f) for f in files], factor, [f.name for f in files])


def cmd_collect(a):
    from .datalog import read_episode, validate_episode
    from .harness.collect import collect
    from .harness.tasks import get_task
    paths = collect(get_task(a.task), a.episodes, a.seed, a.out, frame_jitter_ms=a.jitter_ms)
    for p in paths:
        rep = validate_episode(read_episode(p))
        print(f"{p}  {'valid' if rep.passed else 'INVALID ' + '; '.join(rep.violations)}")
    return 0


def cmd_augment(a):
    from .dabi import augment_directory, load_manifest
    manifest = augment_directory(a.data, a.factor, a.out)
    print(f"{manifest}: {len(load_manifest(manifest))} sequences")
    return 0


def cmd_train(a):
    from .config import load_config
    from .policy import BiACTConfig, build_dataset, train
    opts = load_config(a.config, TRAIN_KEYS) if a.config else {}
    factor = opts.pop("factor", 10)
    seqs = _load_sequences(Path(a.data), factor)
    h = seqs[0].episode.header
    base = BiACTConfig(n_state=3 * h.n_joints, image_size=(h.img_h, h.img_w), n_cameras=h.n_cameras)
    cfg = replace(base, **opts)
    data = build_dataset(seqs, cfg.k)
    heldout = build_dataset(_load_sequences(Path(a.heldout), factor), cfg.k) if a.heldout else None
    model, hist = train(data, cfg, heldout=heldout)
    model.save(a.out)
    if hist.heldout_l1:
        print(f"held-out L1: {hist.heldout_l1[0]:.4f} -> {hist.heldout_l1[-1]:.4f}")
    print(f"trained {len(hist.step_loss)} steps in {hist.seconds:.1f} s; model written to {a.out}")
    return 0


def cmd_eval(a):
    from .executor import ScheduleConfig
    from .harness.evaluate import evaluate
    from .harness.tasks import get_task
    from .policy import PolicyModel
    model = PolicyModel.load(a.model)
    task = get_task(a.task)
    if model.config.n_state != task.state_dim:
        raise ConfigurationError(f"model has N={model.config.n_state}, task {task.name} needs N={task.state_dim}")
    ladder = tuple(float(x) for x in a.stiffness.split(",")) if a.stiffness else None
    sched = ScheduleConfig(inference_latency_ms=a.latency_ms)
    report = evaluate(model, task, a.episodes, a.seed, ladder, ablation=a.no_force, schedule=sched)
    print(report.table())
    if a.json:
        Path(a.json).write_text(report.to_json())
    return 0


def cmd_replay(a):
    from .harness.collect import replay
    _, _, diff = replay(a.episode)
    print(f"max |resimulated - logged| = {diff:.3e}")
    if diff > a.tol:
        raise SimulationIntegrityError(f"replay diverged by {diff:.3e} > {a.tol:g}")
    return 0


def cmd_gradcheck(a):
    from .policy import gradcheck
    res = gradcheck()
    ok = res.max_rel_error < a.tol
    print(f"{'PASS' if ok else 'FAIL'}  max relative error {res.max_rel_error:.3e} over {res.n_checked} "
          f"values (worst {res.worst_param}, limit {a.tol:g})")
    return 0 if ok else 1


def cmd_selftest(a):
    from .selftest import run_selftest
    results = run_selftest()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biact", description="Bilateral-control action chunking workbench")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("collect", help="record scripted teleoperation demonstrations")
    s.add_argument("--task", default="pick")
    s.add_argument("--episodes", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--jitter-ms", type=int, default=0, help="camera timestamp jitter, +/- ms")
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("augment", help="DABI downsampling into a sequence manifest")
    s.add_argument("--in", "--data", dest="data", required=True, help="directory of .biep episodes")
    s.add_argument("--factor", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a policy")
    s.add_argument("--data", required=True, help="episode directory or manifest")
    s.add_argument("--config")
    s.add_argument("--heldout", help="episode directory scored before and after training")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="autonomous evaluation per object hardness")
    s.add_argument("--model", required=True)
    s.add_argument("--task", default="pick")
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--no-force", action="store_true")
    s.add_argument("--stiffness", help="comma-separated K_obj list (default: full ladder)")
    s.add_argument("--latency-ms", type=float, default=14.3)
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("replay", help="re-simulate an episode from its command log")
    s.add_argument("--episode", required=True)
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("selftest", help="controller and observer invariants")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BiactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
