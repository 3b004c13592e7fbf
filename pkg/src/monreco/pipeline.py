"""Per-class recommender built on the prototype network.

For a service and a resource class the model input is the vector of
``similarity x class occurrence`` over the service's top-5 most similar
training services. One binary network is trained per resource class.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cf import SimilarityList, neighbor_lists
from .errors import ModelNotFound, UnknownService
from .evalkit import auc
from .ingest import (
    BinaryVector,
    FeatureKind,
    FeatureSpace,
    LabelMatrix,
    _label_matrix,
    build_feature_space,
    build_label_matrix,
    encode_dataset,
    encode_service,
)
from .model import RESOURCE_CLASSES, Dataset, ResourceClass, ServiceRecord
from .protonet import (
    NetworkConfig,
    PrototypeNetwork,
    decode_prototypes,
    default_threshold,
    network_from_json,
    network_to_json,
    predict_proba,
    train,
)
from .sampling import SplitIndices, upsample_balanced

DEFAULT_FEATURE_KIND = FeatureKind.COMPONENTS
# At the bare NetworkConfig learning rate of 0.05, 1500 full-batch epochs leave
# the per-class networks near chance-level probabilities (cross-entropy ~ ln 2),
# which makes fixed decision thresholds meaningless. 0.5 converges in the same
# budget; 1.0 diverges on the desk fleet.
TRAINING_OVERRIDES = {"learning_rate": 0.5}


def training_config(seed: int = 0, **overrides) -> NetworkConfig:
    """Network settings used by the per-class recommender."""
    data = dict(TRAINING_OVERRIDES, seed=seed)
    data.update(overrides)
    return NetworkConfig.from_mapping(data)


def build_input_features(
    service_id: str,
    cls: ResourceClass,
    neighbors: SimilarityList,
    labels: LabelMatrix,
    width: int = 5,
) -> np.ndarray:
    """``x[j] = sim(service, j-th neighbor) * occurrence(cls, j-th neighbor)``, zero-padded."""
    if neighbors.target != service_id:
        raise UnknownService(f"neighbor list belongs to {neighbors.target!r}, not {service_id!r}")
    x = np.zeros(width)
    for j, (sid, sim) in enumerate(neighbors.neighbors[:width]):
        if sid not in labels.row_index:
            raise UnknownService(sid)
        x[j] = sim * labels.occurrence(sid, cls)
    return x


@dataclass(frozen=True)
class ReferenceFleet:
    """Training services a deployed model compares new services against."""

    space: FeatureSpace
    encoded: dict[str, BinaryVector]
    labels: LabelMatrix

    @classmethod
    def from_dataset(cls, train: Dataset, kind: FeatureKind) -> "ReferenceFleet":
        space = build_feature_space(train, kind)
        return cls(space, encode_dataset(train, space), build_label_matrix(train, "resource"))

    @property
    def service_ids(self) -> list[str]:
        return list(self.labels.service_order)

    def neighbors_of(self, services: Sequence[ServiceRecord], n: int) -> dict[str, SimilarityList]:
        """Top-n training neighbors; a training service never lists itself."""
        encoded = dict(self.encoded)
        for s in services:
            if s.service_id not in encoded:
                encoded[s.service_id] = encode_service(s, self.space)
        return neighbor_lists([s.service_id for s in services], encoded, self.service_ids, n, self.space.kind)

    def features(self, services: Sequence[ServiceRecord], cls: ResourceClass, width: int = 5) -> np.ndarray:
        nbrs = self.neighbors_of(services, width)
        if not services:
            return np.zeros((0, width))
        return np.array([build_input_features(s.service_id, cls, nbrs[s.service_id], self.labels, width) for s in services])

    def to_json(self) -> dict:
        idx = self.labels.row_index
        return {
            "kind": self.space.kind.value,
            "services": [
                {
                    "service_id": sid,
                    "tokens": [self.space.vocabulary[b] for b in self.encoded[sid].set_bits],
                    "occurrence": self.labels.normalized[idx[sid]].tolist(),
                }
                for sid in self.service_ids
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ReferenceFleet":
        kind = FeatureKind.parse(data["kind"])
        rows = data["services"]
        vocab = sorted({t for r in rows for t in r["tokens"]})
        space = FeatureSpace(kind, tuple(vocab))
        index = space.index
        encoded = {r["service_id"]: BinaryVector(space.dimension, tuple(sorted(index[t] for t in r["tokens"]))) for r in rows}
        normalized = np.array([r["occurrence"] for r in rows], dtype=float).reshape(len(rows), -1)
        labels = _label_matrix(
            tuple(r["service_id"] for r in rows), RESOURCE_CLASSES, (normalized > 0).astype(np.int8), normalized
        )
        return cls(space, encoded, labels)


@dataclass
class ClassModel:
    resource_class: ResourceClass
    network: PrototypeNetwork
    reference: ReferenceFleet
    threshold: float
    history: tuple = ()
    evaluation: dict = field(default_factory=dict)

    def predict(self, services: Sequence[ServiceRecord]) -> np.ndarray:
        x = self.reference.features(services, self.resource_class, self.network.config.input_dim)
        return np.atleast_1d(predict_proba(self.network, x))


def decide(probability: float, threshold: float) -> bool:
    """Recommend the class when ``probability >= threshold``."""
    return probability >= threshold


def class_training_data(
    dataset: Dataset, split: SplitIndices, cls: ResourceClass, kind: FeatureKind, width: int = 5
) -> tuple[ReferenceFleet, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reference fleet plus ``(x_train, y_train, x_test, y_test)`` for one class."""
    train_ds = dataset.subset(split.train_ids)
    test_ds = dataset.subset(split.test_ids)
    ref = ReferenceFleet.from_dataset(train_ds, kind)
    x_train = ref.features(list(train_ds), cls, width)
    y_train = np.asarray(ref.labels.column(cls), dtype=np.int64)
    x_test = ref.features(list(test_ds), cls, width)
    y_test = np.asarray(build_label_matrix(test_ds, "resource").column(cls), dtype=np.int64)
    return ref, x_train, y_train, x_test, y_test


def train_class_model(
    dataset: Dataset,
    split: SplitIndices,
    cls: ResourceClass,
    *,
    kind: FeatureKind = DEFAULT_FEATURE_KIND,
    config: NetworkConfig | None = None,
    threshold: float | None = None,
) -> ClassModel:
    """Upsample the training fold, fit a network, and score the test fold."""
    config = config or training_config(split.seed)
    ref, x_train, y_train, x_test, y_test = class_training_data(dataset, split, cls, kind, config.input_dim)
    x_bal, y_bal = upsample_balanced(x_train, y_train, seed=config.seed)
    result = train(config, x_bal, y_bal)
    net = result.network
    net.meta = {
        "resource_class": cls.value,
        "feature_kind": kind.value,
        "split_seed": split.seed,
        "train_size": int(len(y_train)),
        "upsampled_size": int(len(y_bal)),
    }
    model = ClassModel(cls, net, ref, default_threshold(cls) if threshold is None else threshold, result.history)
    if len(y_test) and 0 < y_test.sum() < len(y_test):
        scores = np.atleast_1d(predict_proba(net, x_test))
        model.evaluation = {
            "test_auc": auc(scores, y_test),
            "test_scores": scores.tolist(),
            "test_labels": y_test.tolist(),
            "test_ids": list(dataset.subset(split.test_ids).service_ids),
        }
    return model


# -- checkpoints -----------------------------------------------------------------


def checkpoint_name(cls: ResourceClass) -> str:
    return f"{cls.slug}.json"


def save_class_model(model: ClassModel, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / checkpoint_name(model.resource_class)
    payload = {
        "resource_class": model.resource_class.value,
        "threshold": model.threshold,
        "network": network_to_json(model.network),
        "reference": model.reference.to_json(),
    }
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_class_model(path: str | os.PathLike) -> ClassModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return ClassModel(
        ResourceClass.parse(data["resource_class"]),
        network_from_json(data["network"]),
        ReferenceFleet.from_json(data["reference"]),
        float(data["threshold"]),
    )


def load_models(directory: str | os.PathLike) -> list[ClassModel]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.json")) if directory.is_dir() else []
    models = []
    for p in paths:
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(data, dict) and "network" in data and "resource_class" in data:
            models.append(load_class_model(p))
    if not models:
        raise ModelNotFound(f"no model checkpoints under {directory}")
    return models


@dataclass(frozen=True)
class Recommendation:
    resource_class: ResourceClass
    probability: float
    threshold: float
    recommended: bool
    decoded_prototypes: tuple[tuple[float, ...], ...]
    neighbors: tuple[tuple[str, float], ...]

    def to_json(self) -> dict:
        return {
            "resource_class": self.resource_class.value,
            "probability": self.probability,
            "threshold": self.threshold,
            "recommended": self.recommended,
            "explanation": {
                "decoded_prototypes": [list(p) for p in self.decoded_prototypes],
                "neighbors": [{"service_id": s, "similarity": v} for s, v in self.neighbors],
            },
        }


def recommend(
    service: ServiceRecord,
    models: Iterable[ClassModel],
    thresholds: Mapping[ResourceClass, float] | None = None,
) -> list[Recommendation]:
    """Per-class probability, thresholded decision and prototype explanation."""
    out = []
    for model in models:
        width = model.network.config.input_dim
        nbrs = model.reference.neighbors_of([service], width)[service.service_id]
        x = build_input_features(service.service_id, model.resource_class, nbrs, model.reference.labels, width)
        p = float(predict_proba(model.network, x))
        t = model.threshold if thresholds is None else thresholds.get(model.resource_class, model.threshold)
        out.append(
            Recommendation(
                model.resource_class,
                p,
                t,
                decide(p, t),
                tuple(tuple(float(v) for v in proto) for proto in decode_prototypes(model.network)),
                nbrs.neighbors,
            )
        )
    return out


__all__ = [
    "ClassModel",
    "Recommendation",
    "ReferenceFleet",
    "build_input_features",
    "class_training_data",
    "decide",
    "load_class_model",
    "load_models",
    "recommend",
    "save_class_model",
    "train_class_model",
    "training_config",
]
