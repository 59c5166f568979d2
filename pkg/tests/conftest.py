import numpy as np
import pytest

from fkgelab import graph as kgraph

# acceptance criterion lines collected by tests/test_acceptance.py and
# printed in the terminal summary so the run log shows one line per criterion
CRITERION_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    CRITERION_LINES.append(f"criterion {number:2d}: {status} — {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(CRITERION_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_kg():
    return kgraph.generate_synthetic(60, 6, 300, seed=7)


@pytest.fixture(scope="session")
def small_clients(small_kg):
    return kgraph.partition_federated(small_kg, 3, 0.3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
