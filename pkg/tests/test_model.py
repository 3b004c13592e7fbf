import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import monitor, service
from monreco.model import (
    RESOURCE_CLASSES,
    SLO_CLASSES,
    Dataset,
    ResourceClass,
    SloClass,
    class_enum,
    external_references,
    service_class_sets,
    validate,
)


class TestOntology:
    def test_resource_classes_in_canonical_order(self):
        assert [c.value for c in RESOURCE_CLASSES] == [
            "service level",
            "api",
            "dependency",
            "cpu",
            "compute cluster",
            "storage",
            "ram-memory",
            "cache-memory",
            "container",
            "certificate",
            "io",
            "paging memory",
            "none-of-the-above",
        ]

    def test_slo_classes(self):
        assert len(SLO_CLASSES) == 9
        assert SloClass.SUCCESS_RATE_QOS.value == "success rate - qos"

    @pytest.mark.parametrize("cls", list(ResourceClass) + list(SloClass))
    def test_parse_round_trip(self, cls):
        assert type(cls).parse(cls.value) is cls
        assert type(cls).parse(str(cls).upper()) is cls

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("Ram Memory", ResourceClass.RAM_MEMORY),
            ("ram_memory", ResourceClass.RAM_MEMORY),
            ("  CACHE-memory ", ResourceClass.CACHE_MEMORY),
            ("None of the above", ResourceClass.NONE_OF_THE_ABOVE),
            ("service-level", ResourceClass.SERVICE_LEVEL),
        ],
    )
    def test_parse_separator_equivalence(self, text, expected):
        assert ResourceClass.parse(text) is expected

    @given(st.text(max_size=20))
    def test_closed_enumeration(self, text):
        norm = " ".join(text.replace("-", " ").replace("_", " ").lower().split())
        known = {" ".join(c.value.replace("-", " ").split()) for c in ResourceClass}
        if norm in known:
            assert ResourceClass.parse(text).value
        else:
            with pytest.raises(ValueError):
                ResourceClass.parse(text)

    def test_unknown_class_fails(self):
        with pytest.raises(ValueError, match="gpu"):
            ResourceClass.parse("gpu")

    def test_class_enum(self):
        assert class_enum("resource") is ResourceClass
        assert class_enum("slo") is SloClass
        with pytest.raises(ValueError):
            class_enum("metric")

    def test_slug(self):
        assert ResourceClass.SERVICE_LEVEL.slug == "service-level"


class TestRecords:
    def test_monitor_parses_class_names(self):
        m = monitor("m1", "Ram Memory", "Success Rate")
        assert m.resource_class is ResourceClass.RAM_MEMORY
        assert m.slo_class is SloClass.SUCCESS_RATE

    def test_monitor_rejects_unknown_class(self):
        with pytest.raises(ValueError):
            monitor("m1", "gpu")

    def test_service_normalizes_collections(self):
        s = service("a", up=["b", "b"], comps=["x"])
        assert s.upstream == frozenset({"b"})
        assert isinstance(s.monitors, tuple)

    def test_dataset_subset_keeps_order(self, tiny):
        assert tiny.subset(["c", "a"]).service_ids == ["a", "c"]
        assert tiny.by_id()["b"].service_id == "b"
        assert len(tiny) == 3


class TestValidate:
    def test_duplicate_service(self):
        ds = Dataset((service("a"), service("a")))
        report = validate(ds)
        assert report.rules() == ["DuplicateServiceId"]

    def test_self_dependency(self):
        ds = Dataset((service("a", up=["a"]),))
        assert "SelfDependency" in validate(ds).rules()

    def test_well_formed(self, tiny):
        report = validate(tiny)
        assert report.ok and len(report) == 0

    def test_empty_ids_and_components(self):
        ds = Dataset((service("", comps=[""]),))
        assert set(validate(ds).rules()) == {"EmptyServiceId", "EmptyComponent"}

    def test_duplicate_monitor(self):
        from monreco.model import ServiceRecord

        m = monitor("m1", "cpu")
        ds = Dataset((ServiceRecord("a", monitors=(m, m)),))
        assert validate(ds).rules() == ["DuplicateMonitorId"]

    def test_external_references_are_not_violations(self, tiny):
        assert external_references(tiny) == {"ext-1"}
        assert validate(tiny).ok


class TestServiceClassSets:
    def test_example(self):
        s = service("a", ["cpu", "cpu"], ["capacity", "latency"])
        assert service_class_sets(s) == ({ResourceClass.CPU}, {SloClass.CAPACITY, SloClass.LATENCY})

    def test_empty(self):
        assert service_class_sets(service("a")) == (set(), set())

    def test_full_cover(self):
        s = service("a", [c.value for c in RESOURCE_CLASSES])
        assert len(service_class_sets(s)[0]) == 13

    @given(st.lists(st.sampled_from(RESOURCE_CLASSES), min_size=1, max_size=8), st.integers(0, 7))
    def test_idempotent_under_duplication(self, classes, dup):
        from monreco.model import ServiceRecord

        base = service("a", [c.value for c in classes])
        extra = base.monitors[dup % len(base.monitors)]
        doubled = ServiceRecord("a", monitors=base.monitors + (extra,))
        assert service_class_sets(doubled) == service_class_sets(base)
