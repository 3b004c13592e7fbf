"""Truncated SVD and matrix-completion scoring of hidden resource classes.

Services form the rows of a binary matrix whose columns are feature tokens
followed by resource classes. Test services have their class cells hidden
(set to zero); a rank-k reconstruction of the matrix scores those cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cf import DEFAULT_PREVALENCE_FLOOR, eligible_classes
from .errors import ConvergenceError
from .evalkit import auc
from .ingest import FeatureKind, build_feature_space, build_label_matrix, service_tokens
from .model import RESOURCE_CLASSES, Dataset, ResourceClass
from .sampling import SplitIndices, split_dataset

DEFAULT_RANK = 10
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 2000
DEFAULT_OVERSAMPLE = 10


class Scenario(Enum):
    UPSTREAM_ONLY = "UpstreamOnly"
    COMPONENTS_ONLY = "ComponentsOnly"
    BOTH = "Both"

    @property
    def feature_kind(self) -> FeatureKind:
        return _SCENARIO_KIND[self]

    @classmethod
    def parse(cls, text: "str | Scenario") -> "Scenario":
        if isinstance(text, Scenario):
            return text
        key = str(text).replace("-", "").replace("_", "").replace(" ", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown scenario {text!r}; expected one of {[s.value for s in cls]}")


_SCENARIO_KIND = {
    Scenario.UPSTREAM_ONLY: FeatureKind.UPSTREAM,
    Scenario.COMPONENTS_ONLY: FeatureKind.COMPONENTS,
    Scenario.BOTH: FeatureKind.UPSTREAM_PLUS_COMPONENTS,
}

# AUC per class for upstream-only / components-only / both, as published for
# the proprietary fleet. Shipped for side-by-side reporting, never asserted.
REFERENCE_AUC: dict[ResourceClass, tuple[float, float, float]] = {
    ResourceClass.NONE_OF_THE_ABOVE: (0.47, 0.89, 0.55),
    ResourceClass.CACHE_MEMORY: (0.66, 0.83, 0.67),
}


# -- factorization -----------------------------------------------------------------


@dataclass(frozen=True)
class SvdFactorization:
    u: np.ndarray  # rows x k
    s: np.ndarray  # k, nonincreasing
    vt: np.ndarray  # k x cols
    iterations: int = 0

    @property
    def rank(self) -> int:
        return int(self.s.size)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def _round_robin(b: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint column pairs covering every pair exactly once."""
    n = b + (b % 2)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        left, right = [], []
        for i in range(n // 2):
            p, q = players[i], players[n - 1 - i]
            if p < b and q < b:
                left.append(min(p, q))
                right.append(max(p, q))
        rounds.append((np.array(left, dtype=int), np.array(right, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def hestenes(b: np.ndarray, *, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Jacobi: find orthogonal ``R`` so the columns of ``b @ R`` are orthogonal.

    Returns ``(sigma, R)`` with columns sorted by descending norm ``sigma``.
    """
    w = np.array(b, dtype=float)
    ncol = w.shape[1]
    rot = np.eye(ncol)
    eps = np.finfo(float).eps
    rounds = _round_robin(ncol) if ncol > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            if p.size == 0:
                continue
            wp, wq = w[:, p], w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(gamma) > eps * np.sqrt(alpha * beta)
            active &= gamma != 0
            if not active.any():
                continue
            rotated = True
            # t = tan(theta), smaller root of t^2 + 2 zeta t - 1 = 0 with
            # zeta = (beta - alpha) / (2 gamma), written without dividing by gamma
            diff = beta - alpha
            sign = np.where(diff >= 0, 1.0, -1.0) * np.sign(gamma)
            den = np.abs(diff) + np.hypot(diff, 2.0 * gamma)
            t = np.divide(sign * 2.0 * np.abs(gamma), den, out=np.zeros_like(den), where=active)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            w[:, p], w[:, q] = c * wp - s * wq, s * wp + c * wq
            rp, rq = rot[:, p], rot[:, q]
            rot[:, p], rot[:, q] = c * rp - s * rq, s * rp + c * rq
        if not rotated:
            break
    sigma = np.linalg.norm(w, axis=0)
    order = np.argsort(-sigma, kind="stable")
    return sigma[order], rot[:, order]


def _orthonormalize(w: np.ndarray, against: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis for ``w`` with ``against`` projected out; dead columns refilled at random."""
    n, b = w.shape
    out = w.copy()
    for _ in range(2):
        if against.shape[1]:
            out -= against @ (against.T @ out)
        q, r = np.linalg.qr(out)
        diag = np.abs(np.diag(r)) if b else np.zeros(0)
        scale = max(np.max(np.linalg.norm(w, axis=0)) if b else 0.0, 1.0)
        dead = diag <= 1e-10 * scale
        if dead.any():
            q[:, dead] = rng.standard_normal((n, int(dead.sum())))
        out = q
    if against.shape[1]:
        out -= against @ (against.T @ out)
    return np.linalg.qr(out)[0]


def _complete_basis(cols: np.ndarray, total: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Extend orthonormal ``cols`` (dim x r) to ``total`` orthonormal columns."""
    missing = total - cols.shape[1]
    if missing <= 0:
        return cols
    extra = _orthonormalize(rng.standard_normal((dim, missing)), cols, rng)
    return np.hstack([cols, extra])


def truncated_svd(
    matrix: np.ndarray,
    k: int,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    oversample: int = DEFAULT_OVERSAMPLE,
    seed: int = 0,
) -> SvdFactorization:
    """Leading ``k`` singular triplets by block subspace iteration.

    Each iteration performs a Rayleigh-Ritz step (one-sided Jacobi on
    ``A @ V``), locks the leading Ritz vectors whose residual
    ``||A^T A v - s^2 v||`` is below ``tol * s_max^2``, and applies one
    power step ``A^T A`` to the unlocked block.

    Raises:
        ValueError: ``k`` outside ``[0, min(rows, cols)]``.
        ConvergenceError: no convergence within ``max_iter`` iterations.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    m, n = a.shape
    if not 0 <= k <= min(m, n):
        raise ValueError(f"k must lie in [0, {min(m, n)}], got {k}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite values")
    if k == 0:
        return SvdFactorization(np.zeros((m, 0)), np.zeros(0), np.zeros((0, n)))

    rng = np.random.default_rng(seed)
    block = min(n, k + max(oversample, 0))
    locked = np.zeros((n, 0))
    active = _orthonormalize(rng.standard_normal((n, block)), locked, rng)
    tiny = np.finfo(float).tiny

    for it in range(1, max_iter + 1):
        basis = np.hstack([locked, active])
        sigma, rot = hestenes(a @ basis)
        ritz = basis @ rot
        smax2 = max(sigma[0] ** 2, tiny)
        resid = np.linalg.norm(a.T @ (a @ ritz) - ritz * sigma**2, axis=0)
        converged = resid <= tol * smax2
        n_lock = 0
        while n_lock < k and converged[n_lock]:
            n_lock += 1
        if n_lock >= k:
            return _finish(a, ritz[:, :k], sigma[:k], rng, it)
        if block == n:
            # the basis spans the whole space, so further iteration cannot help
            if np.all(resid[:k] <= 64 * np.finfo(float).eps * smax2 * math.sqrt(n)):
                return _finish(a, ritz[:, :k], sigma[:k], rng, it)
        locked = ritz[:, :n_lock]
        active = ritz[:, n_lock:]
        active = _orthonormalize(a.T @ (a @ active), locked, rng)
    raise ConvergenceError(f"subspace iteration did not converge in {max_iter} iterations (k={k})")


def _finish(a: np.ndarray, v: np.ndarray, s: np.ndarray, rng: np.random.Generator, it: int) -> SvdFactorization:
    m = a.shape[0]
    cut = max(s[0], 1.0) * 1e-7 if s.size else 0.0
    keep = s > cut
    u = np.zeros((m, s.size))
    u[:, keep] = (a @ v[:, keep]) / s[keep]
    if keep.any():
        u[:, keep] = _polish(u[:, keep])
    if not keep.all():
        u[:, ~keep] = _complete_basis(u[:, keep], s.size, m, rng)[:, int(keep.sum()):]
    s = np.where(keep, s, np.maximum(s, 0.0))
    return SvdFactorization(u, s, v.T.copy(), it)


def _polish(u: np.ndarray) -> np.ndarray:
    """Remove residual non-orthogonality while keeping column signs."""
    q, r = np.linalg.qr(u)
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


# -- combined matrix ---------------------------------------------------------------


@dataclass(frozen=True)
class CombinedMatrix:
    """Service x (feature tokens + resource classes) matrix with hidden test labels.

    ``values`` has every masked cell set to 0. The hidden labels live in
    ``hidden`` and are read only by evaluation code.
    """

    row_order: tuple[str, ...]
    column_order: tuple[str, ...]
    n_feature_columns: int
    values: np.ndarray
    mask: np.ndarray  # bool, True where a cell is hidden
    hidden: np.ndarray = field(repr=False)
    scenario: Scenario = Scenario.COMPONENTS_ONLY

    @property
    def class_columns(self) -> range:
        return range(self.n_feature_columns, len(self.column_order))

    def class_column(self, cls: ResourceClass) -> int:
        return self.n_feature_columns + RESOURCE_CLASSES.index(cls)

    @property
    def masked_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.mask)
        return list(zip(rows.tolist(), cols.tolist()))

    @property
    def masked_rows(self) -> list[int]:
        return sorted(set(np.nonzero(self.mask)[0].tolist()))


def build_combined_matrix(dataset: Dataset, split: SplitIndices, scenario: Scenario | str) -> CombinedMatrix:
    """Binary matrix over all services; test services' class cells are masked."""
    scenario = Scenario.parse(scenario)
    kind = scenario.feature_kind
    space = build_feature_space(dataset, kind)
    labels = build_label_matrix(dataset, "resource")
    rows = tuple(dataset.service_ids)
    columns = tuple(space.vocabulary) + tuple(c.value for c in RESOURCE_CLASSES)
    nf = space.dimension
    full = np.zeros((len(rows), len(columns)))
    index = space.index
    for i, service in enumerate(dataset):
        for tok in service_tokens(service, kind):
            full[i, index[tok]] = 1.0
        full[i, nf:] = labels.binary[labels.row_index[service.service_id]]
    test = set(split.test_ids)
    mask = np.zeros(full.shape, dtype=bool)
    for i, sid in enumerate(rows):
        if sid in test:
            mask[i, nf:] = True
    values = np.where(mask, 0.0, full)
    hidden = np.where(mask, full, 0.0)
    for arr in (values, mask, hidden):
        arr.setflags(write=False)
    return CombinedMatrix(rows, columns, nf, values, mask, hidden, scenario)


def predict_masked(matrix: CombinedMatrix, factorization: SvdFactorization) -> dict[tuple[int, int], float]:
    """Rank-k reconstruction at each masked cell."""
    cells = matrix.masked_cells
    if not cells:
        return {}
    rows = np.array([r for r, _ in cells])
    cols = np.array([c for _, c in cells])
    scaled = factorization.u[rows] * factorization.s
    vals = np.einsum("ij,ji->i", scaled, factorization.vt[:, cols])
    return {cell: float(v) for cell, v in zip(cells, vals)}


def default_rank(matrix: CombinedMatrix | np.ndarray, rank: int = DEFAULT_RANK) -> int:
    shape = matrix.values.shape if isinstance(matrix, CombinedMatrix) else np.shape(matrix)
    return max(0, min(rank, min(shape) - 1))


# -- ablation ----------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    resource_class: ResourceClass
    auc: dict[Scenario, float | None]
    reference: tuple[float, float, float] | None


@dataclass(frozen=True)
class AblationReport:
    rows: tuple[AblationRow, ...]
    scenarios: tuple[Scenario, ...]
    rank: int
    split_seed: int
    notes: tuple[str, ...] = ()

    def auc(self, cls: ResourceClass, scenario: Scenario | str) -> float | None:
        scenario = Scenario.parse(scenario)
        for row in self.rows:
            if row.resource_class is cls:
                return row.auc.get(scenario)
        raise KeyError(cls)

    def to_csv(self) -> str:
        ref_cols = ("reference_UpstreamOnly", "reference_ComponentsOnly", "reference_Both")
        head = ["resource_class"] + [s.value for s in self.scenarios] + list(ref_cols)
        lines = [",".join(head)]
        order = list(Scenario)
        for row in self.rows:
            cells = [row.resource_class.value]
            cells += ["" if row.auc.get(s) is None else f"{row.auc[s]:.6f}" for s in self.scenarios]
            if row.reference is None:
                cells += ["", "", ""]
            else:
                cells += [f"{row.reference[order.index(s)]:.2f}" for s in order]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def scenario_auc(
    dataset: Dataset, split: SplitIndices, scenario: Scenario | str, classes, rank: int = DEFAULT_RANK, **svd_kwargs
) -> dict[ResourceClass, float | None]:
    """Test-set AUC of reconstructed class cells for one scenario."""
    cm = build_combined_matrix(dataset, split, scenario)
    k = default_rank(cm, rank)
    fact = truncated_svd(cm.values, k, **svd_kwargs)
    scores = predict_masked(cm, fact)
    rows = cm.masked_rows
    out: dict[ResourceClass, float | None] = {}
    for cls in classes:
        col = cm.class_column(cls)
        y = np.array([cm.hidden[r, col] for r in rows], dtype=int)
        if y.all() or not y.any():
            out[cls] = None
            continue
        out[cls] = auc([scores[(r, col)] for r in rows], y)
    return out


def run_ablation(
    dataset: Dataset,
    seed: int = 0,
    *,
    rank: int = DEFAULT_RANK,
    scenarios=tuple(Scenario),
    prevalence_floor: float = DEFAULT_PREVALENCE_FLOOR,
    **svd_kwargs,
) -> AblationReport:
    """Class x scenario AUC table for an 80:20 split drawn with ``seed``."""
    scenarios = tuple(Scenario.parse(s) for s in scenarios)
    split = split_dataset(dataset, 0.8, seed)
    classes = eligible_classes(build_label_matrix(dataset, "resource"), prevalence_floor)
    per = {s: scenario_auc(dataset, split, s, classes, rank, **svd_kwargs) for s in scenarios}
    notes = []
    rows = []
    for cls in classes:
        aucs = {s: per[s][cls] for s in scenarios}
        if all(v is None for v in aucs.values()):
            notes.append(f"{cls.value}: single-class test labels, no AUC")
        rows.append(AblationRow(cls, aucs, REFERENCE_AUC.get(cls)))
    return AblationReport(tuple(rows), scenarios, rank, seed, tuple(notes))


__all__ = [
    "AblationReport",
    "AblationRow",
    "CombinedMatrix",
    "REFERENCE_AUC",
    "Scenario",
    "SvdFactorization",
    "build_combined_matrix",
    "default_rank",
    "hestenes",
    "predict_masked",
    "run_ablation",
    "truncated_svd",
]
