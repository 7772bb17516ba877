"""Nearest-centroid disambiguation with MFS fallback and similarity reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .corpus import WordDataset
from .embedding import EmbeddingCache, pool
from .errors import CwsdError
from .sensemodel import SenseTable

NEAREST_NEIGHBOR = "nearest_neighbor"
MFS_FALLBACK = "mfs_fallback"
BELOW_THRESHOLD = "below_threshold_abstain"


@dataclass(frozen=True)
class Prediction:
    """Outcome of classifying one instance.

    ``similarity`` is the maximum cosine over available centroids (0.0 for
    a pure MFS fallback, where no centroid exists to compare against).
    An abstention keeps the MFS label so every instance stays scoreable;
    the flag survives into reports.
    """

    instance_id: str
    predicted: int
    similarity: float
    decided_by: str


def cosine(u, v) -> float:
    """Cosine similarity with float64 accumulation, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise CwsdError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise CwsdError("cosine undefined for a zero vector")
    sim = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, sim))


def classify_instance(
    vec, table: SenseTable, threshold: float | None = None, instance_id: str = ""
) -> Prediction:
    """Pick the sense whose centroid is nearest by cosine.

    Cosine ties break toward the lowest class index. Senses without a
    centroid never win (the argmax runs over available centroids only);
    a table with no centroids at all answers with its MFS label. With a
    threshold, a best match below it abstains, still reporting the MFS
    label as the effective answer.
    """
    if not table.centroids:
        return Prediction(instance_id, table.mfs, 0.0, MFS_FALLBACK)
    best_class = None
    best_sim = -np.inf
    for c in sorted(table.centroids):
        sim = cosine(vec, table.centroids[c])
        if sim > best_sim:
            best_sim = sim
            best_class = c
    if threshold is not None and best_sim < threshold:
        return Prediction(instance_id, table.mfs, best_sim, BELOW_THRESHOLD)
    return Prediction(instance_id, best_class, best_sim, NEAREST_NEIGHBOR)


def classify_split(
    ds: WordDataset,
    embeddings: EmbeddingCache,
    table: SenseTable,
    split: str = "test",
    threshold: float | None = None,
):
    """One prediction per instance of a split, in instance order."""
    out = []
    for inst in ds.split(split):
        vec = pool(embeddings[inst.instance_id], table.pooling)
        out.append(
            classify_instance(vec, table, threshold, instance_id=inst.instance_id)
        )
    return out


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    coverage: float
    precision: float | None  # None when nothing is covered


@dataclass(frozen=True)
class SimilarityReport:
    """Per-instance (similarity, correct) rows plus a threshold sweep.

    At threshold t the sweep counts only nearest-neighbor decisions with
    similarity >= t: coverage is their fraction of all predictions and
    precision the fraction of those that are correct.
    """

    rows: tuple  # (instance_id, similarity, correct, decided_by)
    sweep: tuple


def similarity_report(predictions, gold, step: float = 0.05) -> SimilarityReport:
    predictions = list(predictions)
    gold = list(gold)
    if len(predictions) != len(gold):
        raise CwsdError(
            f"{len(predictions)} predictions vs {len(gold)} gold labels"
        )
    rows = tuple(
        (p.instance_id, p.similarity, p.predicted == g, p.decided_by)
        for p, g in zip(predictions, gold)
    )
    total = len(rows)
    n_steps = round(1.0 / step)
    sweep = []
    for i in range(n_steps + 1):
        t = round(i * step, 10)
        covered = [
            correct
            for _, sim, correct, decided in rows
            if decided == NEAREST_NEIGHBOR and sim >= t
        ]
        coverage = len(covered) / total if total else 0.0
        precision = sum(covered) / len(covered) if covered else None
        sweep.append(SweepRow(threshold=t, coverage=coverage, precision=precision))
    return SimilarityReport(rows=rows, sweep=tuple(sweep))


def predictions_csv(predictions, gold) -> str:
    """CSV text: instance_id,gold,predicted,similarity,decided_by."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["instance_id", "gold", "predicted", "similarity", "decided_by"])
    for p, g in zip(predictions, gold):
        writer.writerow([p.instance_id, g, p.predicted, f"{p.similarity:.6f}", p.decided_by])
    return buf.getvalue()


def parse_predictions_csv(text: str):
    """Inverse of predictions_csv: -> (predictions, gold)."""
    reader = csv.DictReader(io.StringIO(text))
    predictions, gold = [], []
    for i, row in enumerate(reader):
        try:
            predictions.append(
                Prediction(
                    instance_id=row["instance_id"],
                    predicted=int(row["predicted"]),
                    similarity=float(row.get("similarity") or 0.0),
                    decided_by=row.get("decided_by") or NEAREST_NEIGHBOR,
                )
            )
            gold.append(int(row["gold"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CwsdError(f"predictions CSV row {i + 2}: {e}") from None
    return predictions, gold


def sweep_csv(report: SimilarityReport) -> str:
    """CSV text: threshold,coverage,precision (empty cell when undefined)."""
    lines = ["threshold,coverage,precision"]
    for row in report.sweep:
        precision = "" if row.precision is None else f"{row.precision:.6f}"
        lines.append(f"{row.threshold:.2f},{row.coverage:.6f},{precision}")
    return "".join(line + "\n" for line in lines)


def similarities_csv(report: SimilarityReport) -> str:
    """Raw per-instance rows for external distribution plots."""
    lines = ["instance_id,similarity,correct,decided_by"]
    for instance_id, sim, correct, decided in report.rows:
        lines.append(f"{instance_id},{sim:.6f},{int(correct)},{decided}")
    return "".join(line + "\n" for line in lines)
