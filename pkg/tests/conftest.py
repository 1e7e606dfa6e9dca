import numpy as np
import pytest

from lemkit.cell import init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_lem():
    return init_params(4, 3, 2, 0.3, seed=7)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
