"""Seeded train/test splitting and class-balancing upsampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SingleClassError
from .model import Dataset


@dataclass(frozen=True)
class SplitIndices:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test ids overlap")

    @property
    def all_ids(self) -> set[str]:
        return set(self.train_ids) | set(self.test_ids)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> SplitIndices:
    """Shuffle service ids with ``seed`` and cut the first ``round(ratio * n)`` off as train."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    ids = dataset.service_ids
    if len(ids) < 2:
        raise ValueError("need at least two services to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = round_half_up(ratio * len(ids))
    n_train = min(max(n_train, 1), len(ids) - 1)
    shuffled = [ids[i] for i in order]
    return SplitIndices(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), seed)


def upsample_balanced(x: np.ndarray, y: Sequence[int], seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Resample the minority class with replacement until both classes are equal.

    All original rows are kept, followed by the resampled minority rows.
    """
    x = np.asarray(x)
    y = np.asarray(y).astype(np.int64)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise SingleClassError("upsampling needs both classes present")
    minority, deficit = (pos, neg.size - pos.size) if pos.size < neg.size else (neg, pos.size - neg.size)
    rng = np.random.default_rng(seed)
    extra = rng.choice(minority, size=deficit, replace=True) if deficit else np.empty(0, dtype=np.int64)
    idx = np.concatenate([np.arange(y.size), extra])
    return x[idx], y[idx]
