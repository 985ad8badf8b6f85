import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training/acceptance runs")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _CRITERIA.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
