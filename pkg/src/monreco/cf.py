"""Similarity-based collaborative filtering over service feature vectors.

A service's score for a resource class is the similarity-weighted sum of
that class's normalized occurrence in its top-n most similar peers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ClassAbsentFromTraining, DimensionMismatch, EmptyTestSet, UnknownNeighbor, UnknownService
from .evalkit import evaluate
from .ingest import BinaryVector, FeatureKind, LabelMatrix, build_feature_space, build_label_matrix, encode_dataset
from .model import Dataset, ResourceClass
from .sampling import SplitIndices

DEFAULT_PREVALENCE_FLOOR = 0.05
DEFAULT_TOPN_MAX = 5


def cosine_similarity(u: BinaryVector, v: BinaryVector) -> float:
    if u.dimension != v.dimension:
        raise DimensionMismatch(f"dimensions differ: {u.dimension} != {v.dimension}")
    if not u.popcount or not v.popcount:
        return 0.0
    inter = len(u.bitset & v.bitset)
    return inter / math.sqrt(u.popcount * v.popcount)


@dataclass(frozen=True)
class SimilarityList:
    target: str
    neighbors: tuple[tuple[str, float], ...]
    kind: FeatureKind | None = None

    def __len__(self) -> int:
        return len(self.neighbors)

    def top(self, n: int) -> "SimilarityList":
        return SimilarityList(self.target, self.neighbors[:n], self.kind)

    @property
    def ids(self) -> list[str]:
        return [sid for sid, _ in self.neighbors]

    @property
    def similarities(self) -> list[float]:
        return [sim for _, sim in self.neighbors]


def _rank(target: str, pairs: Iterable[tuple[str, float]], n: int) -> tuple[tuple[str, float], ...]:
    ranked = sorted((p for p in pairs if p[0] != target), key=lambda p: (-p[1], p[0]))
    return tuple(ranked[:n])


def top_n_similar(
    target: str,
    encoded: Mapping[str, BinaryVector],
    n: int,
    *,
    candidates: Iterable[str] | None = None,
    kind: FeatureKind | None = None,
) -> SimilarityList:
    """The ``n`` most similar services to ``target``, ties by ascending id.

    ``candidates`` restricts the neighbor pool (e.g. to training services);
    the target itself is never its own neighbor.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if target not in encoded:
        raise UnknownService(target)
    pool = encoded.keys() if candidates is None else candidates
    tv = encoded[target]
    pairs = ((sid, cosine_similarity(tv, encoded[sid])) for sid in pool)
    return SimilarityList(target, _rank(target, pairs, n), kind)


def dense_matrix(vectors: Sequence[BinaryVector]) -> np.ndarray:
    dim = vectors[0].dimension if vectors else 0
    out = np.zeros((len(vectors), dim))
    for i, v in enumerate(vectors):
        out[i, list(v.set_bits)] = 1.0
    return out


def similarity_matrix(queries: Sequence[BinaryVector], refs: Sequence[BinaryVector]) -> np.ndarray:
    """Cosine similarity of every query against every reference vector."""
    q = dense_matrix(queries)
    r = dense_matrix(refs)
    if q.shape[1] != r.shape[1]:
        raise DimensionMismatch("query and reference dimensions differ")
    inter = q @ r.T
    norms = np.outer(q.sum(axis=1), r.sum(axis=1))
    # same expression as cosine_similarity so both paths agree bit for bit
    return np.divide(inter, np.sqrt(norms), out=np.zeros_like(inter), where=norms > 0)


def neighbor_lists(
    query_ids: Sequence[str],
    encoded: Mapping[str, BinaryVector],
    ref_ids: Sequence[str],
    n: int,
    kind: FeatureKind | None = None,
) -> dict[str, SimilarityList]:
    """Batch form of :func:`top_n_similar` with the same ordering rules."""
    for sid in list(query_ids) + list(ref_ids):
        if sid not in encoded:
            raise UnknownService(sid)
    if not query_ids:
        return {}
    ref_ids = list(ref_ids)
    sims = similarity_matrix([encoded[s] for s in query_ids], [encoded[s] for s in ref_ids])
    out = {}
    for i, target in enumerate(query_ids):
        out[target] = SimilarityList(target, _rank(target, zip(ref_ids, sims[i].tolist()), n), kind)
    return out


def cf_score(target: str, cls: ResourceClass, neighbors: SimilarityList, labels: LabelMatrix) -> float:
    """Sum over neighbors of similarity times the class's occurrence share."""
    total = 0.0
    for sid, sim in neighbors.neighbors:
        if sid not in labels.row_index:
            raise UnknownNeighbor(sid)
        total += sim * labels.occurrence(sid, cls)
    return total


@dataclass(frozen=True)
class CfCell:
    resource_class: ResourceClass
    top_n: int
    auc: float
    precision: float
    recall: float
    youden_threshold: float


@dataclass(frozen=True)
class CfExperimentReport:
    feature_kind: FeatureKind
    cells: tuple[CfCell, ...]
    notes: tuple[str, ...] = field(default_factory=tuple)

    def cell(self, cls: ResourceClass, n: int) -> CfCell:
        for c in self.cells:
            if c.resource_class is cls and c.top_n == n:
                return c
        raise KeyError((cls, n))

    @property
    def classes(self) -> list[ResourceClass]:
        seen: list[ResourceClass] = []
        for c in self.cells:
            if c.resource_class not in seen:
                seen.append(c.resource_class)
        return seen


def eligible_classes(labels: LabelMatrix, floor: float = DEFAULT_PREVALENCE_FLOOR) -> list[ResourceClass]:
    """Classes carried by more than ``floor`` of the services."""
    return [c for c, p in labels.prevalence().items() if p > floor]


def run_cf_experiment(
    dataset: Dataset,
    kind: FeatureKind,
    split: SplitIndices,
    *,
    topn_max: int = DEFAULT_TOPN_MAX,
    prevalence_floor: float = DEFAULT_PREVALENCE_FLOOR,
    classes: Sequence[ResourceClass] | None = None,
) -> CfExperimentReport:
    """Score every test service from its top-n training neighbors, n = 1..topn_max.

    The feature vocabulary and label matrix come from training services
    only; test services are encoded against that vocabulary.
    """
    kind = FeatureKind.parse(kind)
    if not split.test_ids:
        raise EmptyTestSet("split has no test services")
    train = dataset.subset(split.train_ids)
    test = dataset.subset(split.test_ids)
    train_ids = train.service_ids
    test_ids = test.service_ids

    space = build_feature_space(train, kind)
    encoded = encode_dataset(dataset, space)
    train_labels = build_label_matrix(train, "resource")
    test_labels = build_label_matrix(test, "resource")

    if classes is None:
        classes = eligible_classes(build_label_matrix(dataset, "resource"), prevalence_floor)

    neighbors = neighbor_lists(test_ids, encoded, train_ids, topn_max, kind)
    cells: list[CfCell] = []
    notes: list[str] = []
    for cls in classes:
        if not train_labels.column(cls).any():
            notes.append(f"{cls.value}: skipped, {ClassAbsentFromTraining.__name__}")
            continue
        y = test_labels.column(cls)
        if y.all() or not y.any():
            notes.append(f"{cls.value}: skipped, single-class test labels")
            continue
        for n in range(1, topn_max + 1):
            scores = [cf_score(t, cls, neighbors[t].top(n), train_labels) for t in test_ids]
            op = evaluate(scores, y)
            cells.append(CfCell(cls, n, op.auc, op.precision, op.recall, op.threshold))
    return CfExperimentReport(kind, tuple(cells), tuple(notes))
