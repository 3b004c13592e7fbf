"""Dataset file format, one-hot feature encoding and label matrices.

The on-disk format is JSONL. The first line is a header
``{"schema_version": 1}``; every following line is one service::

    {"service_id": "svc-1", "upstream": ["svc-2"], "downstream": [],
     "components": ["vm-pool"], "monitors": [{"monitor_id": "m1",
     "functionality_group": "...", "metric": "...", "alerting_logic": "...",
     "resource_class": "cpu", "slo_class": "capacity"}]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaVersionError, ValidationError
from .model import (
    RESOURCE_CLASSES,
    SCHEMA_VERSION,
    SLO_CLASSES,
    Dataset,
    MonitorRecord,
    ResourceClass,
    ServiceRecord,
    validate,
)

SUPPORTED_SCHEMA_VERSIONS = frozenset({SCHEMA_VERSION})


class FeatureKind(Enum):
    UPSTREAM = "upstream"
    DOWNSTREAM = "downstream"
    COMPONENTS = "components"
    UPSTREAM_PLUS_COMPONENTS = "both"

    @classmethod
    def parse(cls, name) -> "FeatureKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "upstream": cls.UPSTREAM,
            "downstream": cls.DOWNSTREAM,
            "components": cls.COMPONENTS,
            "both": cls.UPSTREAM_PLUS_COMPONENTS,
            "upstream_plus_components": cls.UPSTREAM_PLUS_COMPONENTS,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown feature kind: {name!r}") from None


def service_tokens(service: ServiceRecord, kind: FeatureKind) -> frozenset[str]:
    """Feature tokens a service contributes under ``kind``."""
    if kind is FeatureKind.UPSTREAM:
        return service.upstream
    if kind is FeatureKind.DOWNSTREAM:
        return service.downstream
    if kind is FeatureKind.COMPONENTS:
        return service.components
    # prefixes keep an upstream id and a component of the same name apart
    return frozenset({f"up:{u}" for u in service.upstream} | {f"comp:{c}" for c in service.components})


@dataclass(frozen=True)
class FeatureSpace:
    kind: FeatureKind
    vocabulary: tuple[str, ...]

    def __post_init__(self):
        vocab = tuple(self.vocabulary)
        if list(vocab) != sorted(set(vocab)):
            raise ValueError("vocabulary must be sorted and duplicate-free")
        object.__setattr__(self, "vocabulary", vocab)

    @cached_property
    def index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.vocabulary)}

    @property
    def dimension(self) -> int:
        return len(self.vocabulary)

    def __len__(self) -> int:
        return len(self.vocabulary)


@dataclass(frozen=True)
class BinaryVector:
    """Sparse 0/1 vector stored as its sorted set-bit positions."""

    dimension: int
    set_bits: tuple[int, ...] = ()

    def __post_init__(self):
        bits = tuple(self.set_bits)
        if any(b >= a for a, b in zip(bits[1:], bits)):
            raise ValueError("set_bits must be strictly increasing")
        if bits and (bits[0] < 0 or bits[-1] >= self.dimension):
            raise ValueError("set_bits out of range")
        object.__setattr__(self, "set_bits", bits)

    @cached_property
    def bitset(self) -> frozenset[int]:
        return frozenset(self.set_bits)

    @property
    def popcount(self) -> int:
        return len(self.set_bits)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dimension)
        out[list(self.set_bits)] = 1.0
        return out


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    """Service x class occurrence table.

    ``binary[i, c]`` flags any monitor of class ``c`` in service ``i``;
    ``normalized[i, c]`` is that class's share of the service's monitors.
    """

    service_order: tuple[str, ...]
    class_order: tuple
    binary: np.ndarray
    normalized: np.ndarray

    @cached_property
    def row_index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.service_order)}

    @cached_property
    def col_index(self) -> dict:
        return {c: j for j, c in enumerate(self.class_order)}

    def occurrence(self, service_id: str, cls) -> float:
        return float(self.normalized[self.row_index[service_id], self.col_index[cls]])

    def column(self, cls, *, normalized: bool = False) -> np.ndarray:
        table = self.normalized if normalized else self.binary
        return table[:, self.col_index[cls]]

    def prevalence(self) -> dict:
        """Fraction of services carrying each class."""
        n = max(len(self.service_order), 1)
        return {c: float(self.binary[:, j].sum()) / n for j, c in enumerate(self.class_order)}

    def rows_for(self, service_ids: Sequence[str]) -> "LabelMatrix":
        idx = [self.row_index[s] for s in service_ids]
        return _label_matrix(tuple(service_ids), self.class_order, self.binary[idx], self.normalized[idx])


def _label_matrix(order, classes, binary, normalized) -> LabelMatrix:
    binary = np.ascontiguousarray(binary, dtype=np.int8)
    normalized = np.ascontiguousarray(normalized, dtype=np.float64)
    binary.setflags(write=False)
    normalized.setflags(write=False)
    return LabelMatrix(tuple(order), tuple(classes), binary, normalized)


# -- file format --------------------------------------------------------------

_MONITOR_FIELDS = ("monitor_id", "functionality_group", "metric", "alerting_logic", "resource_class", "slo_class")


def _str_list(obj: dict, key: str, line: int) -> list[str]:
    value = obj.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ParseError(line, f"{key!r} must be a list of strings")
    return value


def _parse_monitor(raw, line: int) -> MonitorRecord:
    if not isinstance(raw, dict):
        raise ParseError(line, "monitor entries must be objects")
    missing = [f for f in _MONITOR_FIELDS if f not in raw]
    if missing:
        raise ParseError(line, f"monitor missing fields {missing}")
    for f in _MONITOR_FIELDS:
        if not isinstance(raw[f], str):
            raise ParseError(line, f"monitor field {f!r} must be a string")
    try:
        return MonitorRecord(
            monitor_id=raw["monitor_id"],
            functionality_group=raw["functionality_group"],
            metric_name=raw["metric"],
            alerting_logic=raw["alerting_logic"],
            resource_class=raw["resource_class"],
            slo_class=raw["slo_class"],
        )
    except ValueError as exc:
        raise ParseError(line, str(exc)) from None


def parse_service(obj, line: int = 0) -> ServiceRecord:
    """Build a :class:`ServiceRecord` from one decoded JSON object."""
    if not isinstance(obj, dict):
        raise ParseError(line, "service line must be a JSON object")
    sid = obj.get("service_id")
    if not isinstance(sid, str):
        raise ParseError(line, "'service_id' must be a string")
    monitors = obj.get("monitors", [])
    if not isinstance(monitors, list):
        raise ParseError(line, "'monitors' must be a list")
    return ServiceRecord(
        service_id=sid,
        upstream=frozenset(_str_list(obj, "upstream", line)),
        downstream=frozenset(_str_list(obj, "downstream", line)),
        components=frozenset(_str_list(obj, "components", line)),
        monitors=tuple(_parse_monitor(m, line) for m in monitors),
    )


def service_to_json(service: ServiceRecord) -> dict:
    return {
        "service_id": service.service_id,
        "upstream": sorted(service.upstream),
        "downstream": sorted(service.downstream),
        "components": sorted(service.components),
        "monitors": [
            {
                "monitor_id": m.monitor_id,
                "functionality_group": m.functionality_group,
                "metric": m.metric_name,
                "alerting_logic": m.alerting_logic,
                "resource_class": m.resource_class.value,
                "slo_class": m.slo_class.value,
            }
            for m in service.monitors
        ],
    }


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Read and validate a JSONL dataset.

    Raises:
        ParseError: malformed JSON, missing fields or an unknown class name.
        SchemaVersionError: the header names an unsupported version.
        ValidationError: the parsed dataset violates a model invariant.
    """
    services: list[ServiceRecord] = []
    version = SCHEMA_VERSION
    seen_content = False
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            if not seen_content:
                seen_content = True
                if isinstance(obj, dict) and "schema_version" in obj and "service_id" not in obj:
                    version = obj["schema_version"]
                    if version not in SUPPORTED_SCHEMA_VERSIONS:
                        raise SchemaVersionError(f"unsupported schema_version {version!r}")
                    continue
            services.append(parse_service(obj, lineno))

    dataset = Dataset(tuple(services), version)
    report = validate(dataset)
    if not report.ok:
        raise ValidationError(report.violations)
    return dataset


def save_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": dataset.schema_version}) + "\n")
        for service in dataset.services:
            fh.write(json.dumps(service_to_json(service), ensure_ascii=False) + "\n")


# -- encodings ------------------------------------------------------------------


def build_feature_space(dataset: Dataset | Iterable[ServiceRecord], kind: FeatureKind) -> FeatureSpace:
    kind = FeatureKind.parse(kind)
    vocab: set[str] = set()
    for service in dataset:
        vocab |= service_tokens(service, kind)
    return FeatureSpace(kind, tuple(sorted(vocab)))


def encode_service(service: ServiceRecord, space: FeatureSpace) -> BinaryVector:
    """One-hot encode ``service`` against ``space``; unseen tokens are dropped."""
    index = space.index
    bits = sorted(index[t] for t in service_tokens(service, space.kind) if t in index)
    return BinaryVector(space.dimension, tuple(bits))


def encode_dataset(dataset: Dataset | Iterable[ServiceRecord], space: FeatureSpace) -> dict[str, BinaryVector]:
    return {s.service_id: encode_service(s, space) for s in dataset}


def build_label_matrix(dataset: Dataset | Iterable[ServiceRecord], class_kind: str = "resource") -> LabelMatrix:
    if class_kind == "resource":
        classes, attr = RESOURCE_CLASSES, "resource_class"
    elif class_kind == "slo":
        classes, attr = SLO_CLASSES, "slo_class"
    else:
        raise ValueError(f"class_kind must be 'resource' or 'slo', got {class_kind!r}")
    col = {c: j for j, c in enumerate(classes)}
    services = list(dataset)
    counts = np.zeros((len(services), len(classes)))
    for i, service in enumerate(services):
        for m in service.monitors:
            counts[i, col[getattr(m, attr)]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return _label_matrix(
        tuple(s.service_id for s in services), classes, (counts > 0).astype(np.int8), normalized
    )


__all__ = [
    "BinaryVector",
    "FeatureKind",
    "FeatureSpace",
    "LabelMatrix",
    "ResourceClass",
    "build_feature_space",
    "build_label_matrix",
    "encode_dataset",
    "encode_service",
    "load_dataset",
    "parse_service",
    "save_dataset",
    "service_to_json",
    "service_tokens",
]
