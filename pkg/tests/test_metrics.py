import math

import numpy as np
import pytest

from histoseg.errors import EmptyDataset, EmptyMatrix, ShapeMismatch
from histoseg.metrics import (
    ConfusionMatrix,
    MetricSet,
    compute_metrics,
    confusion_matrix,
    evaluate_dataset,
    load_result_rows,
    save_results,
)


def oracle_scores(pred, truth, cls):
    """Independent per-pixel enumeration plus direct formula evaluation."""
    tp = fp = fn = tn = 0
    for r in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            p = pred[r, c] == cls
            t = truth[r, c] == cls
            if p and t:
                tp += 1
            elif p and not t:
                fp += 1
            elif not p and t:
                fn += 1
            else:
                tn += 1
    total = tp + fp + fn + tn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den > 0 else 0.0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    acc = (tp + tn) / total
    tpr = tp / (tp + fn) if tp + fn else 0.0
    tnr = tn / (tn + fp) if tn + fp else 0.0
    auc = (tpr + tnr) / 2
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return {"mcc": mcc, "iou": iou, "acc": acc, "auc": auc, "f1": f1}


class TestConfusionMatrix:
    def test_perfect_prediction_has_no_errors(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 4, (5, 5))
        for cls in range(4):
            cm = confusion_matrix(truth, truth, cls)
            assert cm.fp == 0 and cm.fn == 0
            assert cm.total == 25

    def test_hand_counted_example(self):
        pred = np.array([[1, 1], [0, 0]])
        truth = np.array([[1, 0], [0, 0]])
        cm = confusion_matrix(pred, truth, cls=1)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (1, 1, 0, 2)

    def test_absent_class(self):
        rasters = np.zeros((4, 4), dtype=int)
        cm = confusion_matrix(rasters, rasters, cls=3)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (0, 0, 0, 16)

    def test_tp_across_classes_counts_correct_pixels(self):
        rng = np.random.default_rng(1)
        pred = rng.integers(0, 4, (6, 6))
        truth = rng.integers(0, 4, (6, 6))
        tp_sum = sum(confusion_matrix(pred, truth, cls).tp for cls in range(4))
        assert tp_sum == int((pred == truth).sum())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            confusion_matrix(np.zeros((2, 2), int), np.zeros((3, 3), int), 0)


class TestComputeMetrics:
    def test_perfect(self):
        m = compute_metrics(ConfusionMatrix(tp=10, fp=0, fn=0, tn=6))
        assert m == MetricSet(mcc=1.0, iou=1.0, acc=1.0, auc=1.0, f1=1.0)

    def test_direct_formula_example(self):
        m = compute_metrics(ConfusionMatrix(tp=50, tn=30, fp=10, fn=10))
        assert m.mcc == pytest.approx(0.5833, abs=1e-4)
        assert m.iou == pytest.approx(0.7143, abs=1e-4)
        assert m.acc == pytest.approx(0.8, abs=1e-12)
        assert m.auc == pytest.approx(0.7917, abs=1e-4)
        assert m.f1 == pytest.approx(0.8333, abs=1e-4)

    def test_degenerate_absent_class_policy(self):
        m = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=16))
        assert (m.mcc, m.iou, m.f1) == (0.0, 0.0, 0.0)
        assert m.acc == 1.0
        assert m.auc == 0.5  # tpr := 0, tnr = 1

    def test_scale_invariance(self):
        base = compute_metrics(ConfusionMatrix(tp=5, fp=3, fn=2, tn=10))
        scaled = compute_metrics(ConfusionMatrix(tp=35, fp=21, fn=14, tn=70))
        for name, value in base.as_dict().items():
            assert scaled.as_dict()[name] == pytest.approx(value, rel=1e-12)

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrix):
            compute_metrics(ConfusionMatrix(0, 0, 0, 0))

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            h, w = rng.integers(1, 9, 2)
            pred = rng.integers(0, 4, (h, w))
            truth = rng.integers(0, 4, (h, w))
            for cls in range(4):
                ours = compute_metrics(confusion_matrix(pred, truth, cls)).as_dict()
                ref = oracle_scores(pred, truth, cls)
                for name in ours:
                    assert abs(ours[name] - ref[name]) <= 1e-12

    def test_swapping_pred_and_truth(self):
        rng = np.random.default_rng(3)
        pred = rng.integers(0, 4, (7, 7))
        truth = rng.integers(0, 4, (7, 7))
        for cls in range(4):
            a = confusion_matrix(pred, truth, cls)
            b = confusion_matrix(truth, pred, cls)
            assert (a.fp, a.fn) == (b.fn, b.fp)
            ma, mb = compute_metrics(a), compute_metrics(b)
            assert ma.acc == mb.acc
            assert ma.f1 == mb.f1 and ma.iou == mb.iou and ma.mcc == mb.mcc


class TestEvaluateDataset:
    def test_identity_pair_scores_one(self):
        rng = np.random.default_rng(4)
        raster = rng.integers(0, 4, (6, 6))
        # ensure every class appears so nothing degenerates
        raster[0, :4] = [0, 1, 2, 3]
        result = evaluate_dataset([(raster, raster)])
        assert len(result.rows) == 4
        for row in result.rows:
            assert row.scores == MetricSet(1.0, 1.0, 1.0, 1.0, 1.0)
        assert result.overall == MetricSet(1.0, 1.0, 1.0, 1.0, 1.0)

    def test_means_are_arithmetic_averages(self):
        rng = np.random.default_rng(5)
        pairs = [
            (rng.integers(0, 4, (5, 5)), rng.integers(0, 4, (5, 5))) for _ in range(2)
        ]
        result = evaluate_dataset(pairs, classes=(1,))
        per_sample = [r.scores.f1 for r in result.rows]
        assert result.class_means["TUMOR"].f1 == pytest.approx(sum(per_sample) / 2)
        assert result.overall.f1 == pytest.approx(result.class_means["TUMOR"].f1)

    def test_empty_pairs(self):
        with pytest.raises(EmptyDataset):
            evaluate_dataset([])

    def test_results_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        pairs = [
            (rng.integers(0, 4, (5, 5)), rng.integers(0, 4, (5, 5))) for _ in range(3)
        ]
        result = evaluate_dataset(pairs, sample_ids=["a", "b", "c"])
        path = tmp_path / "results.csv"
        save_results(result, path)
        text = path.read_text()
        assert text.splitlines()[0] == "sample_id,class,mcc,iou,acc,auc,f1"
        assert "mean,overall," in text
        rows = load_result_rows(path)
        assert len(rows) == 12  # 3 samples x 4 classes, summary block skipped
        # stored scores stay on the 0-1 scale
        assert all(0.0 <= getattr(r.scores, m) <= 1.0 for r in rows for m in ("iou", "acc", "auc", "f1"))
        for loaded, orig in zip(rows, result.rows):
            assert loaded.sample_id == orig.sample_id
            assert loaded.class_name == orig.class_name
            assert loaded.scores.f1 == pytest.approx(orig.scores.f1, abs=1e-6)
