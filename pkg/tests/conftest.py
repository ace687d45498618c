import numpy as np
import pytest

from stablereinforce.env import generate_tasks
from stablereinforce.policy import PolicyParams

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tasks():
    return generate_tasks(0, 64, gap_scale=1.0, dim=4)


@pytest.fixture
def random_params(rng):
    return PolicyParams.random(rng, dim=4, scale=0.5)
