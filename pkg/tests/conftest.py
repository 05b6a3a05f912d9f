import sys

import numpy as np
import pytest

from leakloc import fixtures


@pytest.fixture(scope="session")
def grid3():
    return fixtures.grid3()


@pytest.fixture(scope="session")
def grid5():
    return fixtures.grid5()


@pytest.fixture(scope="session")
def grid5_sensors(grid5):
    return fixtures.grid5_sensors(grid5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
