"""Confusion matrices, precision/recall/F1 with micro and macro averaging,
MFS/LFS breakdowns, grouped reports, and the sense-bias metric.

Conventions that every consumer relies on:
  * any 0/0 ratio (precision, recall, or F1 of an absent/never-predicted
    class) is 0, not NaN;
  * micro-F1 aggregates true positives globally, which for single-label
    classification equals plain accuracy;
  * macro-F1 averages over ALL classes, including zero-support ones.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .corpus import round_half_up
from .errors import CwsdError


@dataclass(frozen=True)
class ConfusionMatrix:
    """k x k gold-by-predicted counts; cells[i][j] = gold i predicted j."""

    k: int
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.shape != (self.k, self.k):
            raise CwsdError(f"expected {self.k}x{self.k} cells, got {cells.shape}")
        if (cells < 0).any():
            raise CwsdError("negative confusion count")
        object.__setattr__(self, "cells", cells)

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    def row_sums(self) -> np.ndarray:
        return self.cells.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.cells.sum(axis=0)


def confusion(gold, pred, k: int) -> ConfusionMatrix:
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise CwsdError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    cells = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, pred):
        if not (0 <= g < k and 0 <= p < k):
            raise CwsdError(f"label pair ({g}, {p}) out of range for k={k}")
        cells[g, p] += 1
    return ConfusionMatrix(k=k, cells=cells)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[ClassMetrics, ...]
    micro_f1: float
    macro_f1: float
    accuracy: float
    mfs_f1: float | None = None
    lfs_f1: float | None = None

    def to_json(self) -> dict:
        return {
            "per_class": [
                {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for m in self.per_class
            ],
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "mfs_f1": self.mfs_f1,
            "lfs_f1": self.lfs_f1,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics(
    cm: ConfusionMatrix, mfs_class: int | None = None, lfs_class: int | None = None
) -> MetricsReport:
    """Per-class precision/recall/F1 plus micro and macro aggregates.

    ``mfs_class``/``lfs_class`` designate which classes count as most and
    least frequent in training; their F1 is surfaced separately when given.
    """
    if cm.total == 0:
        raise CwsdError("empty confusion matrix")
    tp = np.diag(cm.cells).astype(np.float64)
    col = cm.col_sums().astype(np.float64)
    row = cm.row_sums().astype(np.float64)
    per_class = []
    for i in range(cm.k):
        p = _safe_div(tp[i], col[i])
        r = _safe_div(tp[i], row[i])
        f1 = _safe_div(2 * p * r, p + r)
        per_class.append(ClassMetrics(p, r, f1, int(row[i])))
    # Global TP/FP/FN aggregation; in single-label classification the
    # summed false positives equal the summed false negatives, so
    # micro-P = micro-R = micro-F1 = accuracy.
    micro_p = _safe_div(tp.sum(), col.sum())
    micro_r = _safe_div(tp.sum(), row.sum())
    micro_f1 = _safe_div(2 * micro_p * micro_r, micro_p + micro_r)
    macro_f1 = sum(m.f1 for m in per_class) / cm.k
    accuracy = float(tp.sum()) / cm.total
    return MetricsReport(
        per_class=tuple(per_class),
        micro_f1=micro_f1,
        macro_f1=macro_f1,
        accuracy=accuracy,
        mfs_f1=per_class[mfs_class].f1 if mfs_class is not None else None,
        lfs_f1=per_class[lfs_class].f1 if lfs_class is not None else None,
    )


def percent(value: float) -> float:
    """Fraction -> percentage with one decimal, round half up."""
    return round_half_up(100.0 * value, 1)


def grouped_metrics(instances, predictions, k: int, key=None):
    """Metrics computed independently per group tag.

    ``key`` maps an instance to its group; the default reads the
    instance's own ``group`` field, with untagged instances pooled
    under "ungrouped".
    """
    instances = list(instances)
    predictions = list(predictions)
    if len(instances) != len(predictions):
        raise CwsdError(f"{len(instances)} instances vs {len(predictions)} predictions")
    if key is None:
        key = lambda inst: inst.group if inst.group is not None else "ungrouped"
    buckets: dict[str, tuple[list, list]] = {}
    for inst, pred in zip(instances, predictions):
        gold_list, pred_list = buckets.setdefault(key(inst), ([], []))
        gold_list.append(inst.gold)
        pred_list.append(pred.predicted if hasattr(pred, "predicted") else pred)
    return {
        group: metrics(confusion(gold_list, pred_list, k))
        for group, (gold_list, pred_list) in sorted(buckets.items())
    }


@dataclass(frozen=True)
class BiasReport:
    """Misclassification mass flowing into each sense.

    For one run, the bias toward sense j sums over all other senses i the
    fraction of gold-i instances predicted as j (gold rows with no
    instances contribute nothing). Across runs the per-sense values are
    aggregated by median, and the headline number is the maximum over
    senses.
    """

    per_sense_bias: tuple[float, ...]
    bias: float
    runs_aggregated: int

    def to_json(self) -> dict:
        return {"per_sense": list(self.per_sense_bias), "max": self.bias}


def _bias_one_run(cm: ConfusionMatrix) -> np.ndarray:
    rows = cm.row_sums().astype(np.float64)
    rates = np.zeros((cm.k, cm.k), dtype=np.float64)
    nonzero = rows > 0
    rates[nonzero] = cm.cells[nonzero] / rows[nonzero, None]
    np.fill_diagonal(rates, 0.0)
    return rates.sum(axis=0)


def sense_bias(cms) -> BiasReport:
    """Median-over-runs bias per sense, and its maximum."""
    cms = list(cms)
    if not cms:
        raise CwsdError("sense_bias needs at least one run")
    k = cms[0].k
    if any(cm.k != k for cm in cms):
        raise CwsdError("confusion matrices disagree on class count")
    per_run = np.stack([_bias_one_run(cm) for cm in cms])
    per_sense = tuple(
        statistics.median(per_run[:, j].tolist()) for j in range(k)
    )
    return BiasReport(
        per_sense_bias=per_sense,
        bias=max(per_sense),
        runs_aggregated=len(cms),
    )


def report_json(
    word: str,
    config_digest: str,
    report: MetricsReport,
    bias: BiasReport | None = None,
    timestamp: str | None = None,
) -> dict:
    """Assemble the canonical evaluation-report JSON object."""
    payload = {
        "word": word,
        "config_digest": config_digest,
        **report.to_json(),
        "bias": bias.to_json() if bias is not None else None,
    }
    if timestamp is not None:
        payload["generated_at"] = timestamp
    return payload


def report_csv_row(word: str, report: MetricsReport) -> str:
    """One flattened CSV row for table assembly (percentages, 1 decimal)."""

    def cell(v):
        return "" if v is None else f"{percent(v):.1f}"

    return ",".join(
        [
            word,
            cell(report.micro_f1),
            cell(report.macro_f1),
            cell(report.mfs_f1),
            cell(report.lfs_f1),
        ]
    )


REPORT_CSV_HEADER = "word,micro_f1,macro_f1,mfs_f1,lfs_f1"
