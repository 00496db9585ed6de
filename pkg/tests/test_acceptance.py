"""End-to-end acceptance criteria, one test per criterion.

The terminal summary prints one PASS/FAIL line per criterion number. The
model-dependent criteria share a module fixture that collects, trains and
evaluates once (about fifteen minutes on one core).
"""
import time
from dataclasses import dataclass, replace

import numpy as np
import pytest

from biact import tensornet as tn
from biact.dabi import augment, downsample_offsets
from biact.datalog import decode_episode, encode_episode, read_episode
from biact.errors import FormatError
from biact.executor import ModelSource, ScheduleConfig, run_autonomous
from biact.harness.analysis import report_analysis
from biact.harness.collect import collect
from biact.harness.evaluate import EvalReport, evaluate
from biact.harness.tasks import sample_scenario
from biact.policy import PolicyModel, build_dataset, config_for_task, gradcheck, train
from biact.selftest import contact_hold_run, press_run, tracking_run
from biact.simcore import DT

pytestmark = pytest.mark.acceptance


@pytest.mark.criterion(1)
def test_bilateral_tracking(record_property):
    t0 = time.perf_counter()
    t, thl, thf = tracking_run(duration_s=5.0, freq_hz=0.5, amp=0.5)
    rms = float(np.sqrt(np.mean((thl - thf)[t >= 1.0] ** 2)))
    took = time.perf_counter() - t0
    record_property("detail", f"RMS {rms:.2e} rad, {took:.1f} s")
    assert rms < 0.01
    assert took < 5.0


@pytest.mark.criterion(2)
def test_action_reaction(record_property):
    run = press_run()
    tl, tf = run[-200:, 0].mean(), run[-200:, 1].mean()
    ratio = abs(tl + tf) / abs(tf)
    record_property("detail", f"|tl+tf|/|tf| = {ratio:.2e}, tl {tl:+.3f}, tf {tf:+.3f}")
    assert ratio < 0.05
    assert np.sign(tl) == -np.sign(tf) != 0


@pytest.mark.criterion(3)
def test_rfob_fidelity(record_property):
    run = contact_hold_run(cutoff=100.0)
    settle = int(np.ceil(5.0 / 100.0 / DT))
    rel = np.abs(run[settle:, 0] - run[settle:, 1]) / np.abs(run[settle:, 1])
    record_property("detail", f"max relative error {rel.max():.2e} after {settle} ms")
    assert rel.max() < 0.05


@pytest.fixture(scope="module")
def collected(pick_task, tmp_path_factory):
    out = tmp_path_factory.mktemp("collect")
    paths = collect(pick_task, 6, 0, out)
    return paths, [read_episode(p) for p in paths]


@pytest.mark.criterion(4)
def test_dabi_exactness(collected, record_property):
    _, eps = collected
    seqs = augment(eps[:5], 10)
    for ep in eps[:5]:
        parts = downsample_offsets(ep, 10)
        idx = np.concatenate([s.sample_indices for s in parts])
        order = np.argsort(idx)
        assert np.array_equal(idx[order], np.arange(ep.n_samples))
        assert np.concatenate([s.values for s in parts])[order].tobytes() == ep.sample_values.tobytes()
    record_property("detail", f"{len(seqs)} sequences from 5 episodes")
    assert len(seqs) == 50


@pytest.mark.criterion(5)
def test_gradient_check(record_property):
    t0 = time.perf_counter()
    res = gradcheck()
    took = time.perf_counter() - t0
    record_property("detail", f"max rel error {res.max_rel_error:.2e} over {res.n_checked} values, {took:.0f} s")
    assert res.max_rel_error < 1e-5
    assert took < 120


@dataclass
class Trained:
    full: PolicyModel
    ablation: PolicyModel
    heldout: list
    seconds: float
    report_full: EvalReport
    report_ablation: EvalReport


@pytest.fixture(scope="module")
def trained(pick_task, collected):
    _, eps = collected
    cfg = config_for_task(pick_task)
    data = build_dataset(augment(eps[:5], 10), cfg.k)
    held = build_dataset(augment(eps[5:], 10), cfg.k)
    full, hist = train(data, cfg, heldout=held)
    ablation, _ = train(data, replace(cfg, force_mask=True))
    return Trained(full, ablation, hist.heldout_l1, hist.seconds,
                   evaluate(full, pick_task, 10, 7), evaluate(ablation, pick_task, 10, 7))


@pytest.mark.criterion(6)
def test_training_smoke(trained, record_property):
    first, last = trained.heldout[0], trained.heldout[-1]
    record_property("detail", f"held-out L1 {first:.4f} -> {last:.4f} ({first / last:.1f}x) "
                              f"in {trained.seconds / 60:.1f} min")
    assert first / last >= 5.0
    assert trained.seconds < 30 * 60


@pytest.mark.criterion(7)
def test_end_to_end_direction(pick_task, trained, record_property):
    full, abl = trained.report_full, trained.report_ablation
    per_k = {r.stiffness: r.place for r in full.rows}
    abl_k = {r.stiffness: r.place for r in abl.rows}
    record_property("detail", f"full {per_k}, w/o force {abl_k}")
    print("\n" + full.table() + "\n" + abl.table())
    assert full.phase_monotone() and abl.phase_monotone()
    for k in pick_task.trained_stiffness:
        assert full.row(k).place >= 8
    assert abl.successes() <= full.successes()


@pytest.mark.criterion(8)
def test_hardness_trend(demos, trained, record_property):
    demo_means = report_analysis(list(demos.values())).mean_by_stiffness()
    auto = {r.stiffness: r.mean_grasp_torque for r in trained.report_full.rows}
    ks = sorted(demo_means)
    record_property("detail", "demo " + ", ".join(f"{demo_means[k]:.3f}" for k in ks)
                    + "; autonomous " + ", ".join(f"{auto[k]:.3f}" for k in ks))
    assert ks == [50.0, 200.0, 500.0]
    assert all(demo_means[a] < demo_means[b] for a, b in zip(ks, ks[1:]))
    assert all(auto[a] < auto[b] for a, b in zip(ks, ks[1:]))


@pytest.mark.criterion(9)
def test_executor_schedule(pick_task, trained, record_property):
    source = ModelSource(trained.full)
    sc = sample_scenario(pick_task, 3, 200.0)
    ok = run_autonomous(pick_task, source, 3, duration_ms=30_000, scenario=sc)
    late = run_autonomous(pick_task, source, 3, scenario=sc, schedule=ScheduleConfig(inference_latency_ms=250.0))
    record_property("detail", f"30 s: {ok.underruns} underruns, {len(ok.latch_ticks)} latches; "
                              f"250 ms: {late.underruns} underrun")
    assert ok.fault is None and ok.underruns == 0
    assert np.array_equal(ok.latch_ticks, np.arange(0, 30_000, 10))
    assert ok.episode.n_samples == 30_000
    assert late.underruns == 1 and "underrun" in late.fault


@pytest.mark.criterion(10)
def test_determinism_and_formats(pick_task, collected, trained, tmp_path, record_property):
    paths, eps = collected
    again = collect(pick_task, 2, 0, tmp_path / "again")
    for a, b in zip(paths, again):
        assert a.read_bytes() == b.read_bytes()
    r1 = evaluate(trained.full, pick_task, 2, 11, (50.0,)).to_json()
    r2 = evaluate(trained.full, pick_task, 2, 11, (50.0,)).to_json()
    assert r1 == r2
    for ep in eps:
        data = encode_episode(ep)
        assert encode_episode(decode_episode(data)) == data
    wpath = trained.full.save(tmp_path / "m.biwt")
    blob = wpath.read_bytes()
    cfg, arrays = tn.load_weights(wpath)
    assert tn.encode_weights(cfg, arrays) == blob
    rng = np.random.default_rng(0)
    cuts = 0
    for blob_, decode in ((encode_episode(eps[0]), decode_episode), (blob, tn.decode_weights)):
        for cut in rng.integers(0, len(blob_), 200):
            with pytest.raises(FormatError):
                decode(blob_[:cut])
            cuts += 1
    record_property("detail", f"2 files byte-identical, eval JSON identical, {cuts} truncations all rejected")
