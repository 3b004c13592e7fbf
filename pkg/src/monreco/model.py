"""Domain types: ontology classes, monitors, services, datasets."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

SCHEMA_VERSION = 1

_SEPARATORS = re.compile(r"[\s\-_]+")


def _normalize(name: str) -> str:
    return _SEPARATORS.sub(" ", name.strip().lower()).strip()


class _LabelEnum(Enum):
    """Enum whose values are canonical display names.

    Parsing is case-insensitive and treats hyphens, underscores and
    whitespace runs as equivalent.
    """

    @classmethod
    def parse(cls, name: str):
        if isinstance(name, cls):
            return name
        key = _normalize(str(name))
        for member in cls:
            if _normalize(member.value) == key:
                return member
        raise ValueError(f"unknown {cls.__name__}: {name!r}")

    @property
    def label(self) -> str:
        return self.value

    @property
    def slug(self) -> str:
        return _normalize(self.value).replace(" ", "-")

    def __str__(self) -> str:
        return self.value


class ResourceClass(_LabelEnum):
    SERVICE_LEVEL = "service level"
    API = "api"
    DEPENDENCY = "dependency"
    CPU = "cpu"
    COMPUTE_CLUSTER = "compute cluster"
    STORAGE = "storage"
    RAM_MEMORY = "ram-memory"
    CACHE_MEMORY = "cache-memory"
    CONTAINER = "container"
    CERTIFICATE = "certificate"
    IO = "io"
    PAGING_MEMORY = "paging memory"
    NONE_OF_THE_ABOVE = "none-of-the-above"


class SloClass(_LabelEnum):
    SUCCESS_RATE = "success rate"
    CAPACITY = "capacity"
    LATENCY = "latency"
    AVAILABILITY = "availability"
    THROUGHPUT = "throughput"
    SUCCESS_RATE_QOS = "success rate - qos"
    INTERRUPTION_RATE = "interruption rate"
    FRESHNESS = "freshness"
    OTHERS = "others"


RESOURCE_CLASSES: tuple[ResourceClass, ...] = tuple(ResourceClass)
SLO_CLASSES: tuple[SloClass, ...] = tuple(SloClass)


def class_enum(class_kind: str) -> type[_LabelEnum]:
    """Map ``"resource"`` / ``"slo"`` to the matching enum."""
    if class_kind == "resource":
        return ResourceClass
    if class_kind == "slo":
        return SloClass
    raise ValueError(f"class_kind must be 'resource' or 'slo', got {class_kind!r}")


@dataclass(frozen=True)
class MonitorRecord:
    monitor_id: str
    functionality_group: str
    metric_name: str
    alerting_logic: str
    resource_class: ResourceClass
    slo_class: SloClass

    def __post_init__(self):
        object.__setattr__(self, "resource_class", ResourceClass.parse(self.resource_class))
        object.__setattr__(self, "slo_class", SloClass.parse(self.slo_class))


@dataclass(frozen=True)
class ServiceRecord:
    """One microservice.

    ``upstream`` holds services this one relies on, ``downstream`` the
    services consuming it. Ids outside the dataset are allowed.
    """

    service_id: str
    upstream: frozenset[str] = frozenset()
    downstream: frozenset[str] = frozenset()
    components: frozenset[str] = frozenset()
    monitors: tuple[MonitorRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "upstream", frozenset(self.upstream))
        object.__setattr__(self, "downstream", frozenset(self.downstream))
        object.__setattr__(self, "components", frozenset(self.components))
        object.__setattr__(self, "monitors", tuple(self.monitors))


@dataclass(frozen=True)
class Dataset:
    services: tuple[ServiceRecord, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))

    def __len__(self) -> int:
        return len(self.services)

    def __iter__(self):
        return iter(self.services)

    @property
    def service_ids(self) -> list[str]:
        return [s.service_id for s in self.services]

    def by_id(self) -> dict[str, ServiceRecord]:
        return {s.service_id: s for s in self.services}

    def subset(self, service_ids: Iterable[str]) -> "Dataset":
        """Services whose id is in ``service_ids``, in dataset order."""
        keep = set(service_ids)
        return Dataset(tuple(s for s in self.services if s.service_id in keep), self.schema_version)


@dataclass(frozen=True)
class Violation:
    rule: str
    service_id: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


def validate(dataset: Dataset) -> ValidationReport:
    """Collect every invariant violation in ``dataset``.

    Unresolved dependency ids are not violations; see
    :func:`external_references`.
    """
    out: list[Violation] = []
    counts = Counter(s.service_id for s in dataset.services)
    for sid, n in counts.items():
        if n > 1:
            out.append(Violation("DuplicateServiceId", sid, f"appears {n} times"))

    for s in dataset.services:
        if not s.service_id:
            out.append(Violation("EmptyServiceId", s.service_id))
        if s.service_id in s.upstream or s.service_id in s.downstream:
            out.append(Violation("SelfDependency", s.service_id))
        if any(not c for c in s.components):
            out.append(Violation("EmptyComponent", s.service_id))
        mids = Counter(m.monitor_id for m in s.monitors)
        if mids.get("", 0):
            out.append(Violation("EmptyMonitorId", s.service_id))
        for mid, n in sorted(mids.items()):
            if mid and n > 1:
                out.append(Violation("DuplicateMonitorId", s.service_id, mid))
    return ValidationReport(tuple(out))


def external_references(dataset: Dataset) -> set[str]:
    """Dependency ids that do not resolve to a service in the dataset."""
    known = {s.service_id for s in dataset.services}
    refs: set[str] = set()
    for s in dataset.services:
        refs |= s.upstream | s.downstream
    return refs - known


def service_class_sets(service: ServiceRecord) -> tuple[set[ResourceClass], set[SloClass]]:
    """Distinct resource and SLO classes covered by a service's monitors."""
    return (
        {m.resource_class for m in service.monitors},
        {m.slo_class for m in service.monitors},
    )
