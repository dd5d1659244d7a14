"""Per-class confusion matrices and the five derived scores.

Every score comes from a one-vs-rest pixel confusion matrix per class.
Degenerate denominators score 0 by policy (a class absent from both rasters
yields 0 for mcc/iou/f1, a defined-by-parts 0.5 for the single-operating-
point auc, and accuracy stays exact), so empty classes show up as zero-score
outliers rather than NaNs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, EmptyMatrix, ShapeMismatch
from .mask_codec import SUPERCLASS_NAMES, ClassMap

METRIC_NAMES = ("mcc", "iou", "acc", "auc", "f1")


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricSet:
    mcc: float
    iou: float
    acc: float
    auc: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass
class ResultRow:
    sample_id: str
    class_name: str
    scores: MetricSet


@dataclass
class EvaluationResult:
    rows: list[ResultRow]
    class_means: dict[str, MetricSet]
    overall: MetricSet


def confusion_matrix(pred: ClassMap, truth: ClassMap, cls: int) -> ConfusionMatrix:
    """One-vs-rest pixel counts for class ``cls`` over equal-shape rasters."""
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    p = pred == cls
    t = truth == cls
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def compute_metrics(cm: ConfusionMatrix) -> MetricSet:
    """The five scores from one confusion matrix, zero on degenerate denominators."""
    if cm.total <= 0:
        raise EmptyMatrix("confusion matrix counts sum to zero")
    tp, fp, fn, tn = cm.tp, cm.fp, cm.fn, cm.tn
    mcc_den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(mcc_den) if mcc_den > 0 else 0.0
    iou = tp / (tp + fp + fn) if tp + fp + fn > 0 else 0.0
    acc = (tp + tn) / cm.total
    tpr = tp / (tp + fn) if tp + fn > 0 else 0.0
    tnr = tn / (tn + fp) if tn + fp > 0 else 0.0
    auc = (tpr + tnr) / 2.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn > 0 else 0.0
    return MetricSet(mcc=mcc, iou=iou, acc=acc, auc=auc, f1=f1)


def _mean_metrics(sets: list[MetricSet]) -> MetricSet:
    return MetricSet(
        **{name: sum(getattr(s, name) for s in sets) / len(sets) for name in METRIC_NAMES}
    )


def evaluate_dataset(
    pairs: list[tuple[ClassMap, ClassMap]],
    classes: tuple[int, ...] = tuple(range(len(SUPERCLASS_NAMES))),
    sample_ids: list[str] | None = None,
) -> EvaluationResult:
    """Score every (pred, truth) pair per class.

    Aggregation is per-sample first (one row per sample and class), then the
    class means over samples, then the overall mean over classes.
    """
    if not pairs:
        raise EmptyDataset("no prediction/truth pairs to evaluate")
    if sample_ids is None:
        sample_ids = [f"sample_{i}" for i in range(len(pairs))]
    rows: list[ResultRow] = []
    per_class: dict[str, list[MetricSet]] = {SUPERCLASS_NAMES[c]: [] for c in classes}
    for sample_id, (pred, truth) in zip(sample_ids, pairs):
        for cls in classes:
            scores = compute_metrics(confusion_matrix(pred, truth, cls))
            name = SUPERCLASS_NAMES[cls]
            rows.append(ResultRow(sample_id=sample_id, class_name=name, scores=scores))
            per_class[name].append(scores)
    class_means = {name: _mean_metrics(sets) for name, sets in per_class.items()}
    overall = _mean_metrics(list(class_means.values()))
    return EvaluationResult(rows=rows, class_means=class_means, overall=overall)


# -- results file -------------------------------------------------------------

SUMMARY_ID = "mean"


def save_results(result: EvaluationResult, path: str | Path) -> None:
    """Write results.csv: one row per (sample, class), scores stored 0-1,
    then a summary block of class means and the overall mean."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "class"] + list(METRIC_NAMES))
        for row in result.rows:
            writer.writerow(
                [row.sample_id, row.class_name]
                + [f"{getattr(row.scores, m):.6f}" for m in METRIC_NAMES]
            )
        for name, scores in result.class_means.items():
            writer.writerow(
                [SUMMARY_ID, name] + [f"{getattr(scores, m):.6f}" for m in METRIC_NAMES]
            )
        writer.writerow(
            [SUMMARY_ID, "overall"]
            + [f"{getattr(result.overall, m):.6f}" for m in METRIC_NAMES]
        )


def load_result_rows(path: str | Path) -> list[ResultRow]:
    """Per-sample rows of a results.csv; summary rows are skipped."""
    rows: list[ResultRow] = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            if record["sample_id"] == SUMMARY_ID:
                continue
            scores = MetricSet(**{m: float(record[m]) for m in METRIC_NAMES})
            rows.append(
                ResultRow(
                    sample_id=record["sample_id"],
                    class_name=record["class"],
                    scores=scores,
                )
            )
    return rows
