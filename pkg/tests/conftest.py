import pytest

from monreco.model import Dataset, MonitorRecord, ServiceRecord
from monreco.sampling import split_dataset
from monreco.synth import generate_with_truth, preset


def monitor(mid: str, resource: str, slo: str = "capacity", group: str = "fg") -> MonitorRecord:
    return MonitorRecord(mid, group, f"{resource}.metric", "value > 1 for 5m", resource, slo)


def service(sid: str, resources=(), slos=None, up=(), down=(), comps=()) -> ServiceRecord:
    slos = slos or ["capacity"] * len(resources)
    mons = tuple(monitor(f"{sid}-m{i}", r, s) for i, (r, s) in enumerate(zip(resources, slos)))
    return ServiceRecord(sid, frozenset(up), frozenset(down), frozenset(comps), mons)


@pytest.fixture(scope="session")
def desk():
    """Desk preset fleet (500 services, seed 42) with its ground truth."""
    return generate_with_truth(preset("desk", 42))


@pytest.fixture(scope="session")
def desk_split(desk):
    return split_dataset(desk[0], 0.8, 0)


@pytest.fixture
def tiny() -> Dataset:
    return Dataset(
        (
            service("a", ["cpu", "cpu", "api"], ["capacity", "latency", "success rate"], up=["b"], comps=["x", "y"]),
            service("b", ["cpu"], up=["c", "ext-1"], down=["a"], comps=["y"]),
            service("c", ["storage", "api"], down=["b"], comps=["z"]),
        )
    )


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion; the lines are printed in the session summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(name: str, ok: bool, seconds: float, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}  ({seconds:.2f} s)  {detail}".rstrip()
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
