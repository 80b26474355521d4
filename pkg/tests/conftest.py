from hypothesis import settings

# property tests draw from a fixed seed so the suite is reproducible
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, name, ok, detail)``; returns ``ok``."""
    def record(n, name, ok, detail):
        line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
