import numpy as np
import pytest

from ssctm.scenarios import bundled

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Store a one-line acceptance result, shown in the terminal summary."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  [{criterion}] {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def incident():
    return bundled("two_cell_incident")


@pytest.fixture(scope="session")
def baseline():
    return bundled("baseline")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
