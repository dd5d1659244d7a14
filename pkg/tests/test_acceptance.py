"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v -s`` to get one pass/fail line per
criterion (the prints flush only with -s; -v shows the per-test verdicts
either way).
"""

import csv
import math
import time

import numpy as np
import pytest

from conftest import random_raw_mask
from histoseg.cli import main
from histoseg.explore import DatasetSummary, compute_target_shape, make_split
from histoseg.fixture import synth_sample
from histoseg.mask_codec import (
    LocalizationRecord,
    decode_class_map,
    decode_instance_map,
    strip_bounding_boxes,
)
from histoseg.metrics import compute_metrics, confusion_matrix
from histoseg.nn import NetworkConfig, Tensor, build_unet, numeric_gradient
from histoseg.preprocess import StagedSample, TileSample, stage_sample
from histoseg.train import (
    ScheduleState,
    StopState,
    TrainConfig,
    TverskyParams,
    combined_loss,
    early_stop_step,
    fit,
    plateau_step,
)
from histoseg.explore import TargetShape


def report(n, text):
    print(f"criterion {n}: PASS - {text}")


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def test_criterion_01_mask_codec_oracle(basic_table):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    for trial in range(200):
        mask = random_raw_mask(rng, max_side=16)
        im = decode_instance_map(mask)
        # brute-force per-pixel product oracle
        for r in range(mask.height):
            for c in range(mask.width):
                assert im[r, c] == int(mask.ch2[r, c]) * int(mask.ch3[r, c])
        cm = decode_class_map(mask, basic_table)
        ids = sorted(set(np.unique(im)) - {0})
        recs = []
        for k, instance_id in enumerate(ids):
            kind = "bbox" if k % 2 == 0 else "polygon"
            coords = [(0.0, 0.0), (1.0, 1.0)] if kind == "bbox" else [(0, 0), (1, 0), (0, 1)]
            recs.append(LocalizationRecord(int(instance_id), "x", kind, coords))
        once_cm, once_im, _ = strip_bounding_boxes(cm, im, recs)
        twice_cm, twice_im, _ = strip_bounding_boxes(once_cm, once_im, recs)
        assert (once_cm == twice_cm).all() and (once_im == twice_im).all()
        poly_ids = [r.instance_id for r in recs if r.kind == "polygon"]
        keep = np.isin(im, poly_ids) | (im == 0)
        assert (once_cm[keep] == cm[keep]).all()
        assert (once_im[keep] == im[keep]).all()
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    report(1, f"200 masks, product oracle exact, strip idempotent ({elapsed:.2f}s)")


def test_criterion_02_target_shape_reproduces_published_instance():
    summary = DatasetSummary(1744, 400.0, 420.0, 796, 830, {})
    target = compute_target_shape(summary, divisor=32)
    assert target.side == 768
    report(2, "max 796x830 with divisor 32 -> side 768")


def test_criterion_03_loss_gradients_match_finite_differences():
    t0 = time.perf_counter()
    params = TverskyParams(alpha=0.5, beta=0.5)
    worst = 0.0
    for pair in range(20):
        rng = np.random.default_rng(300 + pair)
        probs = rng.uniform(0.05, 0.95, (2, 4, 8, 8))
        probs /= probs.sum(axis=1, keepdims=True)
        onehot = np.zeros_like(probs)
        cls = rng.integers(0, 4, (2, 8, 8))
        for b in range(2):
            for i in range(8):
                for j in range(8):
                    onehot[b, cls[b, i, j], i, j] = 1.0
        pt = Tensor(probs)
        combined_loss(pt, Tensor(onehot), params).backward()

        def scalar(arr):
            return float(combined_loss(Tensor(arr), Tensor(onehot), params).data)

        idx = [tuple(rng.integers(0, s) for s in probs.shape) for _ in range(10)]
        fd = numeric_gradient(scalar, probs, idx, h=1e-4)
        worst = max(worst, max(rel_err(pt.grad[i], fd[i]) for i in idx))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-3
    assert elapsed < 30.0
    report(3, f"20 tensor pairs, worst relative error {worst:.2e} ({elapsed:.2f}s)")


def test_criterion_04_network_gradient_check():
    t0 = time.perf_counter()
    seed = 0
    rng = np.random.default_rng(seed)
    net = build_unet(
        NetworkConfig(depth=2, base_filters=8, in_channels=3, n_classes=4, input_side=32),
        seed=seed,
    )
    x = rng.standard_normal((1, 3, 32, 32))
    onehot = np.zeros((1, 4, 32, 32))
    cls = rng.integers(0, 4, (32, 32))
    for i in range(32):
        for j in range(32):
            onehot[0, cls[i, j], i, j] = 1.0
    params = TverskyParams()

    def loss_value():
        return float(combined_loss(net.forward(Tensor(x)), Tensor(onehot), params).data)

    net.zero_grads()
    combined_loss(net.forward(Tensor(x)), Tensor(onehot), params).backward()
    grads = net.gradients()
    names = list(net.parameters)
    prng = np.random.default_rng(seed + 1)
    # h = 1e-5 keeps the central difference off relu/argmax kinks while
    # float64 still gives ~9 significant digits in the quotient
    h = 1e-5
    worst = 0.0
    for _ in range(50):
        name = names[prng.integers(0, len(names))]
        p = net.parameters[name]
        idx = tuple(prng.integers(0, s) for s in p.data.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        hi = loss_value()
        p.data[idx] = orig - h
        lo = loss_value()
        p.data[idx] = orig
        worst = max(worst, rel_err(grads[name][idx], (hi - lo) / (2 * h)))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-3
    assert elapsed < 120.0
    report(4, f"50 sampled parameters, worst relative error {worst:.2e} ({elapsed:.1f}s)")


def test_criterion_05_overfit_convergence(basic_table):
    t0 = time.perf_counter()
    image, mask, _ = synth_sample(seed=5, side=32)
    image01, cmap = stage_sample(TileSample("one", image, mask, []), basic_table)
    staged = [StagedSample("one", image01, cmap)]
    net = build_unet(
        NetworkConfig(depth=2, base_filters=8, in_channels=3, n_classes=4, input_side=32),
        seed=1,
    )
    # published schedule: lr 0.001, factor 0.1, floor 1e-5, threshold 1e-4,
    # plateau patience 10, early-stop patience 30
    config = TrainConfig(
        lr=0.001,
        factor=0.1,
        min_lr=1e-5,
        min_delta=1e-4,
        plateau_patience=10,
        stop_patience=30,
        batch_size=2,
        max_epochs=300,
        seed=0,
    )
    _, log = fit(net, staged, staged, config, TargetShape(side=32, divisor=32))
    final = min(r.train_loss for r in log.rows)
    lrs = [r.lr for r in log.rows]
    elapsed = time.perf_counter() - t0
    assert final < 0.1
    assert all(a >= b for a, b in zip(lrs, lrs[1:])), "lr column must be non-increasing"
    assert lrs[-1] >= 1e-5
    assert elapsed < 300.0
    report(
        5,
        f"loss {final:.4f} after {len(log.rows)} epochs, lr ends at {lrs[-1]:g} ({elapsed:.1f}s)",
    )


def test_criterion_06_schedule_state_machines():
    t0 = time.perf_counter()
    # (a) reduction fires exactly on the 10th stagnant epoch
    state = plateau_step(ScheduleState(lr=0.001), 1.0)
    for i in range(9):
        state = plateau_step(state, 0.99995)
        assert state.lr == 0.001
    state = plateau_step(state, 0.99995)
    assert state.lr == pytest.approx(1e-4)
    # (b) lr floors at 1e-5
    for _ in range(40):
        state = plateau_step(state, 1.0)
    assert state.lr == pytest.approx(1e-5)
    # (c) early stop fires exactly on the 30th stagnant epoch
    stop = early_stop_step(StopState(), 1.0)
    for i in range(29):
        stop = early_stop_step(stop, 1.0)
        assert not stop.stopped
    stop = early_stop_step(stop, 1.0)
    assert stop.stopped
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    report(6, f"reduction on 10th, floor 1e-5, stop on 30th ({elapsed:.3f}s)")


def _oracle_scores(pred, truth, cls):
    tp = fp = fn = tn = 0
    for r in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            p = pred[r, c] == cls
            t = truth[r, c] == cls
            tp += p and t
            fp += p and not t
            fn += (not p) and t
            tn += (not p) and (not t)
    total = tp + fp + fn + tn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return {
        "mcc": (tp * tn - fp * fn) / math.sqrt(den) if den > 0 else 0.0,
        "iou": tp / (tp + fp + fn) if tp + fp + fn else 0.0,
        "acc": (tp + tn) / total,
        "auc": ((tp / (tp + fn) if tp + fn else 0.0) + (tn / (tn + fp) if tn + fp else 0.0)) / 2,
        "f1": 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0,
    }


def test_criterion_07_metrics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(700)
    degenerate_seen = 0
    for trial in range(500):
        h, w = rng.integers(1, 9, 2)
        if trial % 10 == 0:
            # force degenerate cases: single-class rasters
            pred = np.full((h, w), int(rng.integers(0, 4)))
            truth = np.full((h, w), int(rng.integers(0, 4)))
        else:
            pred = rng.integers(0, 4, (h, w))
            truth = rng.integers(0, 4, (h, w))
        for cls in range(4):
            cm = confusion_matrix(pred, truth, cls)
            ours = compute_metrics(cm).as_dict()
            ref = _oracle_scores(pred, truth, cls)
            if cm.tp + cm.fp + cm.fn == 0:
                degenerate_seen += 1
                assert ours["iou"] == 0.0 and ours["f1"] == 0.0 and ours["mcc"] == 0.0
            for name in ours:
                assert abs(ours[name] - ref[name]) <= 1e-12
    elapsed = time.perf_counter() - t0
    assert degenerate_seen > 0, "degenerate zero-score policy must be exercised"
    assert elapsed < 10.0
    report(7, f"500 raster pairs, {degenerate_seen} degenerate cases, all within 1e-12 ({elapsed:.2f}s)")


def test_criterion_08_split_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(800)
    for _ in range(1000):
        n = int(rng.integers(1, 120))
        seed = int(rng.integers(0, 2**62))
        ids = [f"s{i}" for i in range(n)]
        split = make_split(ids, (0.6, 0.2, 0.2), seed)
        parts = [split.train, split.val, split.eval]
        assert sum(len(p) for p in parts) == n
        assert set().union(*map(set, parts)) == set(ids)
        assert len(split.val) == math.floor(0.2 * n)
        assert len(split.eval) == math.floor(0.2 * n)
        assert make_split(ids, (0.6, 0.2, 0.2), seed) == split
    full = make_split([f"s{i}" for i in range(1744)], (0.6, 0.2, 0.2), seed=7)
    sizes = (len(full.train), len(full.val), len(full.eval))
    # the source study reports 1,257+485 train/val and 347 eval from 1,744
    # samples; those counts are mutually inconsistent (sum 2,089 != 1,744 and
    # 347 != floor(0.2*1744)), so the floor rule below is the documented
    # behavior of this implementation, not a reproduction
    assert sizes == (1048, 348, 348)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    report(8, f"1000 random splits hold the contract; n=1744 -> {sizes} ({elapsed:.2f}s)")


CONFIG_TEXT = """\
[paths]
data_root = {root}
output_dir = {out}

[dataset]
variant = single_rater
seed = 7
ratios = 0.6,0.2,0.2
divisor = 32

[fixture]
n_single = 8
n_multi = 2
side = 32
seed = 0

[augment]
p_mirror = 0.5
p_rotate = 0.5
seed = 11

[network]
depth = 2
base_filters = 8
seed = 1

[trainer]
batch_size = 2
max_epochs = 20
seed = 3
"""

VARIANTS = ("single_rater", "single_rater_nobbox", "combined_multirater_eval")


def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("smoke")
    root = base / "fixture"
    cfg_path = base / "pipeline.ini"
    cfg_path.write_text(CONFIG_TEXT.format(root=root, out=base / "out_a"))
    t0 = time.perf_counter()
    assert main(["make-fixture", "--config", str(cfg_path)]) == 0
    inputs_before = _tree_bytes(root)
    outs = {}
    for run in ("out_a", "out_b"):
        out = base / run
        o = [f"paths.output_dir={out}"]
        assert main(["explore", "--config", str(cfg_path), "--set", o[0]]) == 0
        for variant in VARIANTS:
            assert (
                main(
                    ["prepare", "--config", str(cfg_path), "--set", o[0], "--set", f"dataset.variant={variant}"]
                )
                == 0
            )
        assert main(["train", "--config", str(cfg_path), "--set", o[0]]) == 0
        assert main(["evaluate", "--config", str(cfg_path), "--set", o[0]]) == 0
        assert main(["report", "--config", str(cfg_path), "--set", o[0]]) == 0
        outs[run] = out
    assert _tree_bytes(root) == inputs_before, "subcommands must not mutate input data"
    return outs["out_a"], outs["out_b"], time.perf_counter() - t0


def test_criterion_09_end_to_end_smoke(pipeline_runs):
    out_a, out_b, elapsed = pipeline_runs
    results = out_a / "results.csv"
    assert results.is_file()
    with open(results) as fh:
        rows = list(csv.DictReader(fh))
    sample_rows = [r for r in rows if r["sample_id"] != "mean"]
    eval_ids = {r["sample_id"] for r in sample_rows}
    assert len(sample_rows) == len(eval_ids) * 4, "one row per (eval sample, class)"
    for row in sample_rows:
        for metric in ("iou", "acc", "auc", "f1"):
            assert 0.0 <= float(row[metric]) <= 1.0
        assert -1.0 <= float(row["mcc"]) <= 1.0
    for metric in ("mcc", "iou", "acc", "auc", "f1"):
        svg_a = out_a / "report" / f"boxplot_{metric}.svg"
        svg_b = out_b / "report" / f"boxplot_{metric}.svg"
        assert svg_a.is_file()
        assert svg_a.read_bytes() == svg_b.read_bytes(), f"{metric} boxplot differs on rerun"
    overlays_a = sorted((out_a / "report").glob("overlay_*.png"))
    assert overlays_a, "at least one overlay must be rendered"
    for overlay in overlays_a:
        twin = out_b / "report" / overlay.name
        assert overlay.read_bytes() == twin.read_bytes(), f"{overlay.name} differs on rerun"
    for variant in VARIANTS:
        assert (out_a / "prepared" / variant / "roles.json").is_file()
    assert elapsed < 600.0
    report(9, f"five-stage pipeline on 8+2 samples, {len(sample_rows)} result rows ({elapsed:.1f}s)")


def test_criterion_10_deterministic_artifacts(pipeline_runs):
    out_a, out_b, _ = pipeline_runs
    compared = 0
    for file_a in sorted(p for p in out_a.rglob("*") if p.is_file()):
        rel = file_a.relative_to(out_a)
        file_b = out_b / rel
        assert file_b.is_file(), f"{rel} missing from the rerun"
        if rel.name == "train_log.csv":
            with open(file_a) as fa, open(file_b) as fb:
                rows_a = [r[:-1] for r in csv.reader(fa)]  # drop wall_seconds
                rows_b = [r[:-1] for r in csv.reader(fb)]
            assert rows_a == rows_b, "train_log.csv differs beyond the wall clock"
        else:
            assert file_a.read_bytes() == file_b.read_bytes(), f"{rel} differs between runs"
        compared += 1
    assert compared > 10
    report(10, f"{compared} artifacts byte-identical across reruns (wall clock excluded)")
