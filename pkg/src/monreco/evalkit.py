"""ROC/AUC, Youden thresholding, precision/recall and score densities.

Every decision rule here is inclusive: an item is predicted positive when
``score >= threshold``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoPositiveLabels, SingleClassError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __init__(self, scores: Sequence[float], labels: Sequence[int]):
        s = np.asarray(scores, dtype=float).ravel()
        y = np.asarray(labels).ravel()
        if s.shape != y.shape:
            raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
        if s.size == 0:
            raise ValueError("a ScoredSet needs at least one item")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int8))

    def __len__(self) -> int:
        return self.scores.size

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def _require_both(self):
        if self.n_pos == 0 or self.n_neg == 0:
            raise SingleClassError("need at least one positive and one negative label")


def _as_set(scored, labels=None) -> ScoredSet:
    if isinstance(scored, ScoredSet):
        return scored
    return ScoredSet(scored, labels)


def auc(scored: ScoredSet | Sequence[float], labels: Sequence[int] | None = None) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted half.

    Computed from midranks in O(n log n).
    """
    ss = _as_set(scored, labels)
    ss._require_both()
    order = np.argsort(ss.scores, kind="mergesort")
    sorted_scores = ss.scores[order]
    ranks = np.empty(ss.scores.size)
    # midranks over tie groups
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], sorted_scores.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    n_pos, n_neg = ss.n_pos, ss.n_neg
    u = ranks[ss.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending, first is +inf
    tpr: np.ndarray
    fpr: np.ndarray


def roc_curve(scored: ScoredSet | Sequence[float], labels: Sequence[int] | None = None) -> RocCurve:
    ss = _as_set(scored, labels)
    ss._require_both()
    thresholds = np.r_[np.inf, np.unique(ss.scores)[::-1]]
    pos = ss.labels == 1
    tpr = np.array([np.sum(pos & (ss.scores >= t)) for t in thresholds]) / ss.n_pos
    fpr = np.array([np.sum(~pos & (ss.scores >= t)) for t in thresholds]) / ss.n_neg
    return RocCurve(thresholds, tpr, fpr)


def auc_trapezoid(scored: ScoredSet | Sequence[float], labels: Sequence[int] | None = None) -> float:
    """Area under the ROC polyline by the trapezoid rule."""
    roc = roc_curve(scored, labels)
    return float(np.sum(np.diff(roc.fpr) * (roc.tpr[1:] + roc.tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class YoudenPoint:
    threshold: float
    j: float
    tpr: float
    fpr: float


def youden_threshold(scored: ScoredSet | Sequence[float], labels: Sequence[int] | None = None) -> YoudenPoint:
    """Threshold maximizing J = TPR - FPR.

    Candidates are the distinct scores plus +inf; on ties in J the larger
    threshold wins.
    """
    roc = roc_curve(scored, labels)
    j = roc.tpr - roc.fpr
    # thresholds are descending, so argmax picks the largest threshold among ties
    best = int(np.argmax(j))
    return YoudenPoint(float(roc.thresholds[best]), float(j[best]), float(roc.tpr[best]), float(roc.fpr[best]))


def confusion_at(scored: ScoredSet, threshold: float) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` for the rule ``score >= threshold``."""
    pred = scored.scores >= threshold
    pos = scored.labels == 1
    return (
        int(np.sum(pred & pos)),
        int(np.sum(pred & ~pos)),
        int(np.sum(~pred & pos)),
        int(np.sum(~pred & ~pos)),
    )


def precision_recall_at(
    scored: ScoredSet | Sequence[float], threshold: float, labels: Sequence[int] | None = None
) -> tuple[float, float]:
    """Precision and recall of ``score >= threshold``.

    Precision is 1.0 when nothing is predicted positive.

    Raises:
        NoPositiveLabels: recall is undefined without positive labels.
    """
    ss = _as_set(scored, labels)
    tp, fp, fn, _ = confusion_at(ss, threshold)
    if tp + fn == 0:
        raise NoPositiveLabels("recall is undefined without positive labels")
    precision = tp / (tp + fp) if tp + fp else 1.0
    return precision, tp / (tp + fn)


@dataclass(frozen=True, eq=False)
class DensityReport:
    bin_edges: np.ndarray
    positive_density: np.ndarray
    negative_density: np.ndarray
    empty_positive: bool = False
    empty_negative: bool = False
    clamped: int = 0

    def to_gnuplot(self, which: str = "positive") -> str:
        """Two-column ``bin_center density`` text block."""
        dens = self.positive_density if which == "positive" else self.negative_density
        centers = (self.bin_edges[:-1] + self.bin_edges[1:]) / 2.0
        lines = [f"# {which} density, {dens.size} bins over [0, 1]"]
        lines += [f"{c:.6f} {d:.6f}" for c, d in zip(centers, dens)]
        return "\n".join(lines) + "\n"


def density_report(scored: ScoredSet | Sequence[float], bins: int = 10, labels: Sequence[int] | None = None) -> DensityReport:
    """Per-class normalized histograms of scores over equal-width bins on [0, 1]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    ss = _as_set(scored, labels)
    scores = ss.scores
    outside = int(np.sum((scores < 0) | (scores > 1)))
    if outside:
        log.warning("density_report: clamping %d scores into [0, 1]", outside)
        scores = np.clip(scores, 0.0, 1.0)
    edges = np.linspace(0.0, 1.0, bins + 1)

    def hist(mask):
        counts, _ = np.histogram(scores[mask], bins=edges)
        total = counts.sum()
        return counts / total if total else np.zeros(bins)

    pos = ss.labels == 1
    return DensityReport(edges, hist(pos), hist(~pos), not pos.any(), bool(pos.all()), outside)


@dataclass(frozen=True)
class OperatingPoint:
    """AUC plus precision/recall at the Youden threshold."""

    auc: float
    threshold: float
    precision: float
    recall: float
    j: float


def evaluate(scores: Sequence[float], labels: Sequence[int]) -> OperatingPoint:
    ss = ScoredSet(scores, labels)
    point = youden_threshold(ss)
    precision, recall = precision_recall_at(ss, point.threshold)
    return OperatingPoint(auc(ss), point.threshold, precision, recall, point.j)


def format_threshold(t: float) -> str:
    return "inf" if math.isinf(t) else repr(float(t))
