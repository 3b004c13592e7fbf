"""Seeded synthetic fleets with planted feature -> resource-class rules.

Services belong to latent families. Each family owns a pool of
components, so services of one family look alike in component space.
A planted rule is anchored to one family: most of that family's members
carry the rule's trigger token, and carrying it makes the rule's resource
class very likely. Dependencies are drawn uniformly from a shared id pool
and carry no class signal unless a rule is triggered by one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .ingest import FeatureKind
from .model import Dataset, MonitorRecord, ResourceClass, ServiceRecord, SloClass

R = ResourceClass
S = SloClass

DEFAULT_SLO_MIX: dict[SloClass, float] = {
    S.SUCCESS_RATE: 0.30,
    S.CAPACITY: 0.20,
    S.LATENCY: 0.15,
    S.AVAILABILITY: 0.15,
    S.THROUGHPUT: 0.05,
    S.SUCCESS_RATE_QOS: 0.05,
    S.INTERRUPTION_RATE: 0.03,
    S.FRESHNESS: 0.02,
    S.OTHERS: 0.05,
}

DEFAULT_SLO_CONDITIONAL: dict[ResourceClass, dict[SloClass, float]] = {
    R.CPU: {S.CAPACITY: 0.7, S.LATENCY: 0.1, S.AVAILABILITY: 0.1, S.OTHERS: 0.1},
    R.RAM_MEMORY: {S.CAPACITY: 0.8, S.AVAILABILITY: 0.1, S.OTHERS: 0.1},
    R.STORAGE: {S.CAPACITY: 0.6, S.LATENCY: 0.2, S.AVAILABILITY: 0.2},
    R.CACHE_MEMORY: {S.SUCCESS_RATE: 0.4, S.CAPACITY: 0.4, S.FRESHNESS: 0.2},
    R.CERTIFICATE: {S.FRESHNESS: 0.8, S.OTHERS: 0.2},
    R.API: {S.SUCCESS_RATE: 0.5, S.LATENCY: 0.4, S.AVAILABILITY: 0.1},
    R.COMPUTE_CLUSTER: {S.AVAILABILITY: 0.5, S.CAPACITY: 0.4, S.INTERRUPTION_RATE: 0.1},
    R.DEPENDENCY: {S.SUCCESS_RATE: 0.4, S.AVAILABILITY: 0.3, S.LATENCY: 0.3},
}


@dataclass(frozen=True)
class PlantedRule:
    trigger: str
    kind: FeatureKind
    resource_class: ResourceClass
    p_given_trigger: float = 0.95
    p_without: float = 0.05
    monitors_per_hit: int = 3
    # family whose members usually carry the trigger; None = rule index mod n_families
    anchor_family: int | None = None

    def to_json(self) -> dict:
        return {
            "trigger": self.trigger,
            "kind": self.kind.value,
            "resource_class": self.resource_class.value,
            "p_given_trigger": self.p_given_trigger,
            "p_without": self.p_without,
            "monitors_per_hit": self.monitors_per_hit,
            "anchor_family": self.anchor_family,
        }


@dataclass(frozen=True)
class SynthConfig:
    n_services: int = 500
    mean_upstream: float = 43.0
    mean_downstream: float = 20.0
    mean_components: float = 29.0
    external_ids: int = 300
    component_vocab: int = 400
    n_families: int = 3
    family_pool: int = 40
    family_affinity: float = 0.9
    trigger_coverage: float = 0.97
    trigger_leak: float = 0.02
    rules: tuple[PlantedRule, ...] = ()
    noise_classes: tuple[ResourceClass, ...] = ()
    noise_rate: float = 0.4
    noise_monitors_max: int = 3
    slo_conditional: Mapping[ResourceClass, Mapping[SloClass, float]] = field(
        default_factory=lambda: dict(DEFAULT_SLO_CONDITIONAL)
    )
    default_slo: Mapping[SloClass, float] = field(default_factory=lambda: dict(DEFAULT_SLO_MIX))
    seed: int = 42

    def anchor(self, i: int) -> int:
        rule = self.rules[i]
        return rule.anchor_family if rule.anchor_family is not None else i % self.n_families


def _check_mix(mix: Mapping, what: str) -> None:
    total = sum(mix.values())
    if any(p < 0 or p > 1 for p in mix.values()) or abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{what} must be a probability distribution (sums to {total})")


def validate_config(cfg: SynthConfig) -> None:
    if cfg.n_services < 2:
        raise ConfigError("n_services must be >= 2")
    if cfg.n_families < 1 or cfg.family_pool < 1 or cfg.component_vocab < cfg.family_pool:
        raise ConfigError("need n_families >= 1 and 1 <= family_pool <= component_vocab")
    for name in ("family_affinity", "trigger_coverage", "trigger_leak", "noise_rate"):
        p = getattr(cfg, name)
        if not 0 <= p <= 1:
            raise ConfigError(f"{name} must lie in [0, 1], got {p}")
    for name in ("mean_upstream", "mean_downstream", "mean_components"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    rule_classes = {r.resource_class for r in cfg.rules}
    overlap = rule_classes & set(cfg.noise_classes)
    if overlap:
        raise ConfigError(f"rule classes overlap noise classes: {sorted(c.value for c in overlap)}")
    for i, rule in enumerate(cfg.rules):
        if not (0 <= rule.p_without < rule.p_given_trigger <= 1):
            raise ConfigError(f"rule {rule.trigger!r}: need 0 <= p_without < p_given_trigger <= 1")
        if rule.monitors_per_hit < 1:
            raise ConfigError(f"rule {rule.trigger!r}: monitors_per_hit must be positive")
        if rule.kind is FeatureKind.UPSTREAM_PLUS_COMPONENTS:
            raise ConfigError("rules trigger on a single feature kind")
        if not 0 <= cfg.anchor(i) < cfg.n_families:
            raise ConfigError(f"rule {rule.trigger!r}: anchor family out of range")
    _check_mix(cfg.default_slo, "default_slo")
    for cls, mix in cfg.slo_conditional.items():
        _check_mix(mix, f"slo_conditional[{cls.value}]")


@dataclass(frozen=True)
class GroundTruth:
    """Planted structure behind a generated fleet."""

    config: SynthConfig
    families: dict[str, int]
    triggered: dict[str, tuple[str, ...]]  # rule trigger -> ids of services carrying it

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "seed": cfg.seed,
            "n_services": cfg.n_services,
            "rules": [dict(r.to_json(), anchor_family=cfg.anchor(i)) for i, r in enumerate(cfg.rules)],
            "noise_classes": [c.value for c in cfg.noise_classes],
            "noise_rate": cfg.noise_rate,
            "families": self.families,
            "triggered": {k: list(v) for k, v in self.triggered.items()},
        }


def _draw_slo(rng: np.random.Generator, mix: Mapping[SloClass, float]) -> SloClass:
    classes = list(mix)
    p = np.array([mix[c] for c in classes], dtype=float)
    return classes[int(rng.choice(len(classes), p=p / p.sum()))]


def _sample(rng: np.random.Generator, pool: list[str], k: int) -> list[str]:
    k = min(k, len(pool))
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)] if k else []


def generate_with_truth(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_services
    width = len(str(n - 1))
    ids = [f"svc-{i:0{width}d}" for i in range(n)]
    dep_pool = ids + [f"ext-{i:04d}" for i in range(cfg.external_ids)]
    vocab = [f"comp-{i:04d}" for i in range(cfg.component_vocab)]
    family_pools = [_sample(rng, vocab, cfg.family_pool) for _ in range(cfg.n_families)]
    families = rng.integers(0, cfg.n_families, size=n)

    services = []
    triggered: dict[str, list[str]] = {r.trigger: [] for r in cfg.rules}
    for i, sid in enumerate(ids):
        fam = int(families[i])
        others = [d for d in dep_pool if d != sid]
        upstream = set(_sample(rng, others, int(rng.poisson(cfg.mean_upstream))))
        downstream = set(_sample(rng, others, int(rng.poisson(cfg.mean_downstream))))

        k = max(1, int(rng.poisson(cfg.mean_components)))
        k_family = int(rng.binomial(k, cfg.family_affinity))
        comps = set(_sample(rng, family_pools[fam], k_family))
        rest = [c for c in vocab if c not in comps]
        comps |= set(_sample(rng, rest, k - len(comps)))

        features = {
            FeatureKind.UPSTREAM: upstream,
            FeatureKind.DOWNSTREAM: downstream,
            FeatureKind.COMPONENTS: comps,
        }
        monitors: list[MonitorRecord] = []

        def add_monitors(cls: ResourceClass, count: int):
            mix = cfg.slo_conditional.get(cls, cfg.default_slo)
            for _ in range(count):
                slo = _draw_slo(rng, mix)
                idx = len(monitors)
                monitors.append(
                    MonitorRecord(
                        monitor_id=f"{sid}-m{idx:03d}",
                        functionality_group=f"fg-{cls.slug}",
                        metric_name=f"{cls.slug}.{slo.slug}",
                        alerting_logic=f"{slo.slug} breach over {5 * (1 + idx % 3)}m",
                        resource_class=cls,
                        slo_class=slo,
                    )
                )

        for r_idx, rule in enumerate(cfg.rules):
            p_carry = cfg.trigger_coverage if fam == cfg.anchor(r_idx) else cfg.trigger_leak
            draw = rng.random()
            has_trigger = rule.trigger in features[rule.kind] or draw < p_carry
            if has_trigger:
                features[rule.kind].add(rule.trigger)
                triggered[rule.trigger].append(sid)
            p_fire = rule.p_given_trigger if has_trigger else rule.p_without
            if rng.random() < p_fire:
                add_monitors(rule.resource_class, rule.monitors_per_hit)

        for cls in cfg.noise_classes:
            if rng.random() < cfg.noise_rate:
                add_monitors(cls, int(rng.integers(1, cfg.noise_monitors_max + 1)))

        services.append(
            ServiceRecord(
                service_id=sid,
                upstream=frozenset(upstream),
                downstream=frozenset(downstream),
                components=frozenset(comps),
                monitors=tuple(monitors),
            )
        )

    truth = GroundTruth(
        cfg,
        {sid: int(f) for sid, f in zip(ids, families)},
        {k: tuple(v) for k, v in triggered.items()},
    )
    return Dataset(tuple(services)), truth


def generate(cfg: SynthConfig) -> Dataset:
    return generate_with_truth(cfg)[0]


DESK_RULES = (
    PlantedRule("vm-pool", FeatureKind.COMPONENTS, R.CPU),
    PlantedRule("redis-cache", FeatureKind.COMPONENTS, R.CACHE_MEMORY),
    PlantedRule("cert-manager", FeatureKind.COMPONENTS, R.CERTIFICATE),
)
DESK_NOISE = (R.SERVICE_LEVEL, R.API, R.DEPENDENCY)


def preset(name: str, seed: int = 42) -> SynthConfig:
    """Named configurations: ``desk`` (500 services) and ``paper-scale`` (791)."""
    base = SynthConfig(rules=DESK_RULES, noise_classes=DESK_NOISE, seed=seed)
    if name == "desk":
        return base
    if name == "paper-scale":
        return replace(base, n_services=791)
    raise ConfigError(f"unknown preset {name!r}; expected 'desk' or 'paper-scale'")


def write_truth(truth: GroundTruth, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


__all__ = [
    "GroundTruth",
    "PlantedRule",
    "SynthConfig",
    "generate",
    "generate_with_truth",
    "preset",
    "validate_config",
    "write_truth",
]
