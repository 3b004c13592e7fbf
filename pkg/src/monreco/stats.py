"""Class distributions, phi co-occurrence and chi-squared tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateExpected, DomainError, LengthMismatch
from .model import RESOURCE_CLASSES, SLO_CLASSES, Dataset, ResourceClass

SIGNIFICANCE = 0.05

_GAMMA_EPS = 1e-16
_GAMMA_MAX_ITER = 10_000
_TINY = 1e-300


@dataclass(frozen=True)
class Distribution:
    labels: tuple
    counts: tuple[int, ...]
    fractions: tuple[float, ...]
    # monitors (monitor level) or services (service level) that were counted
    denominator: int = 0

    @classmethod
    def from_counts(cls, labels: Sequence, counts: Sequence[int], denominator: int | None = None) -> "Distribution":
        counts = tuple(int(c) for c in counts)
        total = sum(counts)
        fractions = tuple(c / total if total else 0.0 for c in counts)
        return cls(tuple(labels), counts, fractions, total if denominator is None else denominator)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def count(self, label) -> int:
        return self.counts[self.labels.index(label)]

    def fraction(self, label) -> float:
        return self.fractions[self.labels.index(label)]

    def prevalence(self, label) -> float:
        """Count relative to ``denominator`` (share of services at service level)."""
        return self.count(label) / self.denominator if self.denominator else 0.0

    def mode(self):
        if not self.total:
            return None
        return self.labels[int(np.argmax(self.counts))]


@dataclass(frozen=True)
class ChiSquaredResult:
    statistic: float
    dof: int
    p_value: float
    reject_at_5pct: bool
    low_expected_cells: int


def class_distribution(dataset: Dataset, class_kind: str = "resource", level: str = "monitor") -> Distribution:
    """Counts per class at monitor level, or per (service, class) pair at service level."""
    if class_kind == "resource":
        classes, attr = RESOURCE_CLASSES, "resource_class"
    elif class_kind == "slo":
        classes, attr = SLO_CLASSES, "slo_class"
    else:
        raise ValueError(f"class_kind must be 'resource' or 'slo', got {class_kind!r}")
    if level not in ("monitor", "service"):
        raise ValueError(f"level must be 'monitor' or 'service', got {level!r}")

    col = {c: j for j, c in enumerate(classes)}
    counts = [0] * len(classes)
    units = 0
    for service in dataset:
        values = [getattr(m, attr) for m in service.monitors]
        if level == "service":
            values = set(values)
            units += 1
        else:
            units += len(values)
        for v in values:
            counts[col[v]] += 1
    return Distribution.from_counts(classes, counts, units)


def slo_within_resource(dataset: Dataset) -> dict[ResourceClass, Distribution]:
    """SLO-class distribution of the monitors inside each resource class."""
    table = {r: [0] * len(SLO_CLASSES) for r in RESOURCE_CLASSES}
    slo_col = {s: j for j, s in enumerate(SLO_CLASSES)}
    for service in dataset:
        for m in service.monitors:
            table[m.resource_class][slo_col[m.slo_class]] += 1
    return {r: Distribution.from_counts(SLO_CLASSES, row) for r, row in table.items()}


# -- phi coefficient ------------------------------------------------------------


def contingency_2x2(a: Sequence[int], b: Sequence[int]) -> tuple[int, int, int, int]:
    """Return ``(n11, n10, n01, n00)`` for two binary columns."""
    if len(a) != len(b):
        raise LengthMismatch(f"columns differ in length: {len(a)} != {len(b)}")
    if len(a) == 0:
        raise LengthMismatch("columns must be non-empty")
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    n11 = int(np.sum(a & b))
    n10 = int(np.sum(a & ~b))
    n01 = int(np.sum(~a & b))
    n00 = int(np.sum(~a & ~b))
    return n11, n10, n01, n00


def phi_from_table(n11: int, n10: int, n01: int, n00: int) -> float:
    marginals = (n11 + n10, n01 + n00, n11 + n01, n10 + n00)
    if 0 in marginals:
        return 0.0
    num = n11 * n00 - n10 * n01
    den = math.sqrt(marginals[0] * marginals[1] * marginals[2] * marginals[3])
    return max(-1.0, min(1.0, num / den))


def phi_coefficient(a: Sequence[int], b: Sequence[int]) -> float:
    """Mean-square contingency coefficient of two binary columns.

    Returns 0.0 when any marginal of the 2x2 table is empty; use
    :func:`is_degenerate` to tell that case apart from true independence.
    """
    return phi_from_table(*contingency_2x2(a, b))


def is_degenerate(column: Sequence[int]) -> bool:
    col = np.asarray(column, dtype=bool)
    return bool(col.all() or not col.any())


@dataclass(frozen=True, eq=False)
class PhiMatrix:
    labels: tuple
    values: np.ndarray
    degenerate: tuple[bool, ...]


def phi_matrix(binary: np.ndarray, labels: Sequence | None = None) -> PhiMatrix:
    binary = np.asarray(binary)
    if binary.ndim != 2 or binary.shape[0] < 1:
        raise LengthMismatch("phi_matrix needs a 2-D table with at least one row")
    k = binary.shape[1]
    labels = tuple(labels) if labels is not None else tuple(range(k))
    values = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            values[i, j] = values[j, i] = phi_coefficient(binary[:, i], binary[:, j])
    values.setflags(write=False)
    return PhiMatrix(labels, values, tuple(is_degenerate(binary[:, j]) for j in range(k)))


# -- chi-squared ----------------------------------------------------------------


def _gamma_p_series(s: float, x: float) -> float:
    term = 1.0 / s
    total = term
    a = s
    for _ in range(_GAMMA_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _gamma_q_contfrac(s: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Gamma(s, x)
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h


def regularized_gamma_q(s: float, x: float) -> float:
    """Upper regularized incomplete gamma ``Gamma(s, x) / Gamma(s)``.

    Series expansion below ``x = s + 1``, continued fraction above.
    """
    if not s > 0:
        raise DomainError(f"s must be positive, got {s}")
    if not x >= 0:
        raise DomainError(f"x must be non-negative, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < s + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_p_series(s, x)))
    return min(1.0, max(0.0, _gamma_q_contfrac(s, x)))


def chi2_sf(statistic: float, dof: int) -> float:
    """Survival function of the chi-squared distribution."""
    return regularized_gamma_q(dof / 2.0, max(statistic, 0.0) / 2.0)


def _result(statistic: float, dof: int, low: int) -> ChiSquaredResult:
    p = chi2_sf(statistic, dof)
    return ChiSquaredResult(float(statistic), int(dof), p, p < SIGNIFICANCE, int(low))


def chi2_goodness_of_fit(observed: Sequence[float], expected_fractions: Sequence[float]) -> ChiSquaredResult:
    """Pearson goodness-of-fit of ``observed`` counts against fixed fractions.

    Cells with zero expected fraction and zero observed count are dropped
    before computing the degrees of freedom.
    """
    obs = np.asarray(observed, dtype=float)
    frac = np.asarray(expected_fractions, dtype=float)
    if obs.shape != frac.shape:
        raise LengthMismatch(f"observed has {obs.size} cells, expected {frac.size}")
    total = obs.sum()
    if total <= 0:
        raise DomainError("observed counts must have a positive sum")
    if abs(frac.sum() - 1.0) > 1e-9:
        raise DomainError(f"expected fractions sum to {frac.sum()}, not 1")

    keep = ~((frac == 0) & (obs == 0))
    obs, frac = obs[keep], frac[keep]
    expected = total * frac
    if np.any((expected == 0) & (obs > 0)):
        raise DegenerateExpected("a cell with zero expected count has observations")
    dof = obs.size - 1
    if dof < 1:
        raise DomainError("need at least two retained cells")
    statistic = float(np.sum((obs - expected) ** 2 / expected))
    return _result(statistic, dof, int(np.sum(expected < 5)))


def chi2_independence(table: np.ndarray) -> ChiSquaredResult:
    """Pearson test of independence on an R x K contingency table.

    All-zero rows and columns are dropped; dof = (R - 1)(K - 1).
    """
    t = np.asarray(table, dtype=float)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    r, k = t.shape
    if r < 2 or k < 2:
        raise DomainError("independence test needs at least a 2x2 non-empty table")
    expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()
    statistic = float(np.sum((t - expected) ** 2 / expected))
    return _result(statistic, (r - 1) * (k - 1), int(np.sum(expected < 5)))


def resource_slo_table(dataset: Dataset) -> np.ndarray:
    """Monitor counts, rows in resource-class order, columns in SLO order."""
    within = slo_within_resource(dataset)
    return np.array([within[r].counts for r in RESOURCE_CLASSES], dtype=float)


def per_resource_chi2(dataset: Dataset) -> dict[ResourceClass, ChiSquaredResult]:
    """Test each resource class's SLO mix against the pooled SLO distribution.

    Resource classes without monitors are omitted.
    """
    overall = class_distribution(dataset, "slo", "monitor")
    out = {}
    for r, dist in slo_within_resource(dataset).items():
        if dist.total == 0:
            continue
        out[r] = chi2_goodness_of_fit(dist.counts, overall.fractions)
    return out
