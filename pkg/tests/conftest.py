import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_ACCEPTANCE: dict[str, str] = {}


class Criterion:
    """Records one acceptance criterion and prints its verdict line."""

    def __init__(self, key: str):
        self.key = key
        self.t0 = time.perf_counter()
        self.line: str | None = None

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def check(self, ok: bool, measured, tolerance, limit_s: float | None = None) -> None:
        took = self.elapsed
        timed_ok = limit_s is None or took < limit_s
        verdict = "PASS" if ok and timed_ok else "FAIL"
        budget = "" if limit_s is None else f" budget<{limit_s:g}s"
        self.line = f"{verdict} {self.key}: measured={measured} tolerance={tolerance} time={took:.2f}s{budget}"
        _ACCEPTANCE[self.key] = self.line
        print(self.line)
        assert ok, self.line
        assert timed_ok, self.line


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    key = marker.args[0] if marker else request.node.name
    c = Criterion(key)
    yield c
    if c.line is None:
        _ACCEPTANCE[key] = f"FAIL {key}: raised before a verdict was recorded"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion identifier")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0].lstrip("C"))):
        terminalreporter.write_line(_ACCEPTANCE[key])
