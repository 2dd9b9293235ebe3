import math

import numpy as np
import pytest

TWO_PI = 2.0 * math.pi


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical experiment")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
