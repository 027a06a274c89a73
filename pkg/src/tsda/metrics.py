"""Accuracy, precision-recall / average precision, and PCP landmark scores."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def accuracy(predictions, truths) -> float:
    """Fraction of predictions equal to the truth."""
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if p.shape != t.shape:
        raise ValueError(f"{p.shape[0] if p.ndim else p.size} predictions for {t.shape[0] if t.ndim else t.size} truths")
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(p == t) / p.size)


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_positive: int
    n_total: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for row in zip(self.thresholds, self.precision, self.recall):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def pr_curve(scores, truths) -> PRCurve:
    """Precision and recall at every distinct score threshold, highest first.

    Tied scores enter together at a single threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truths).ravel().astype(bool)
    if s.shape != t.shape:
        raise ValueError("scores and truths differ in length")
    n_pos = int(t.sum())
    if n_pos == 0:
        raise ValueError("precision-recall needs at least one positive example")
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    tp = np.cumsum(t)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    detections = ends + 1
    tp = tp[ends]
    return PRCurve(s[ends], tp / detections, tp / n_pos, n_pos, len(s))


def average_precision(curve: PRCurve) -> float:
    """Area under the precision-recall step curve.

    Each recall increment is credited with the precision reached at its
    threshold: sum_k (r_k - r_{k-1}) p_k with r_0 = 0.
    """
    r = np.r_[0.0, curve.recall]
    return float(np.sum(np.diff(r) * curve.precision))


def pcp_score(predicted, truth, radius: float = 2.0):
    """Per-landmark fraction of predictions within ``radius`` (inclusive) of the truth.

    ``predicted`` and ``truth`` are (N, L, 2) coordinate arrays. Returns
    ``(per_landmark, mean)``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = np.asarray(predicted, dtype=np.float64)
    q = np.asarray(truth, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"predicted landmarks {p.shape} do not match ground truth {q.shape}")
    if p.ndim != 3 or p.shape[-1] != 2 or p.shape[0] == 0:
        raise ValueError("landmarks must be a non-empty (N, L, 2) array")
    dist = np.sqrt(np.sum((p - q) ** 2, axis=-1))
    per = (dist <= radius).mean(axis=0)
    return per, float(per.mean())
