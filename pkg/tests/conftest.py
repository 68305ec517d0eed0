import numpy as np
import pytest

from obstacle_ocp import scenarios
from obstacle_ocp.ocp import path_follow
from obstacle_ocp.stationarity import recover_multipliers

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def s1_run():
    problem, schedule = scenarios.s1()
    history = path_follow(problem, schedule)
    point = recover_multipliers(problem, iterate=history.final)
    return problem, history, point


@pytest.fixture(scope="session")
def s2_run():
    problem, schedule = scenarios.s2()
    history = path_follow(problem, schedule)
    point = recover_multipliers(problem, iterate=history.final)
    return problem, history, point


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
