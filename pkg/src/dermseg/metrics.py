"""Segmentation evaluation: confusion counts, per-image metrics, pooled
attribute metrics, and report serialization.

Conventions (fixed so that 0/0 never occurs):
* tp + fp + fn == 0  ->  jaccard = dice = 1 (agreement on absence)
* tp + fn == 0       ->  sensitivity = 1
* tn + fp == 0       ->  specificity = 1
* thresholded jaccard: J if J >= cutoff else 0 (inclusive at the cutoff)
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .rasters import BinaryMask

JACCARD_CUTOFF_DEFAULT = 0.65


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


@dataclass(frozen=True)
class MetricReport:
    jaccard: float
    thresholded_jaccard: float
    dice: float
    accuracy: float
    sensitivity: float
    specificity: float

    def as_row(self) -> dict[str, float]:
        return asdict(self)


METRIC_FIELDS = tuple(MetricReport.__dataclass_fields__)


def confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    """Exact pixel counts of the 2x2 confusion table."""
    if pred.data.shape != gt.data.shape:
        raise DimensionError(f"shape mismatch: {pred.data.shape} vs {gt.data.shape}")
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def metrics_from_confusion(
    c: ConfusionCounts, jaccard_cutoff: float = JACCARD_CUTOFF_DEFAULT
) -> MetricReport:
    pos = c.tp + c.fp + c.fn
    j = c.tp / pos if pos else 1.0
    d = 2 * c.tp / (2 * c.tp + c.fp + c.fn) if pos else 1.0
    return MetricReport(
        jaccard=j,
        thresholded_jaccard=j if j >= jaccard_cutoff else 0.0,
        dice=d,
        accuracy=(c.tp + c.tn) / c.total if c.total else 1.0,
        sensitivity=c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0,
        specificity=c.tn / (c.tn + c.fp) if c.tn + c.fp else 1.0,
    )


def _pooled_counts(preds: Sequence[BinaryMask], gts: Sequence[BinaryMask]) -> ConfusionCounts:
    if len(preds) != len(gts):
        raise DimensionError(f"list length mismatch: {len(preds)} vs {len(gts)}")
    if not preds:
        raise ValidationError("cannot evaluate an empty list")
    total = ConfusionCounts(0, 0, 0, 0)
    for p, g in zip(preds, gts):
        total = total + confusion(p, g)
    return total


def pooled_attribute_metrics(
    preds: Sequence[BinaryMask], gts: Sequence[BinaryMask]
) -> tuple[float, float]:
    """(jaccard, dice) from confusion counts summed over all images first.

    This is the concatenated multi-image evaluation; it is not the mean of
    per-image scores.
    """
    c = _pooled_counts(preds, gts)
    r = metrics_from_confusion(c)
    return r.jaccard, r.dice


def evaluate_task1(
    preds: Sequence[BinaryMask],
    gts: Sequence[BinaryMask],
    cutoff: float = JACCARD_CUTOFF_DEFAULT,
) -> MetricReport:
    """Arithmetic mean of the per-image metric reports."""
    reports = per_image_reports(preds, gts, cutoff)
    return average_reports(reports)


def per_image_reports(
    preds: Sequence[BinaryMask],
    gts: Sequence[BinaryMask],
    cutoff: float = JACCARD_CUTOFF_DEFAULT,
) -> list[MetricReport]:
    if len(preds) != len(gts):
        raise DimensionError(f"list length mismatch: {len(preds)} vs {len(gts)}")
    if not preds:
        raise ValidationError("cannot evaluate an empty list")
    return [metrics_from_confusion(confusion(p, g), cutoff) for p, g in zip(preds, gts)]


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValidationError("cannot average an empty report list")
    return MetricReport(
        **{f: float(np.mean([getattr(r, f) for r in reports])) for f in METRIC_FIELDS}
    )


def mean_thresholded_jaccard(
    preds: Sequence[BinaryMask],
    gts: Sequence[BinaryMask],
    cutoff: float = JACCARD_CUTOFF_DEFAULT,
) -> float:
    return float(np.mean([r.thresholded_jaccard for r in per_image_reports(preds, gts, cutoff)]))


def write_report_csv(rows: Iterable[tuple[str, MetricReport]], path: str | Path) -> None:
    """One row per case plus an 'aggregate' mean row."""
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("case_id",) + METRIC_FIELDS)
        for case_id, r in rows:
            writer.writerow([case_id] + [f"{getattr(r, m):.6f}" for m in METRIC_FIELDS])
        if rows:
            agg = average_reports([r for _, r in rows])
            writer.writerow(["aggregate"] + [f"{getattr(agg, m):.6f}" for m in METRIC_FIELDS])


def write_report_json(rows: Iterable[tuple[str, MetricReport]], path: str | Path) -> None:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "per_case": {case_id: r.as_row() for case_id, r in rows},
        "aggregate": average_reports([r for _, r in rows]).as_row() if rows else None,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
