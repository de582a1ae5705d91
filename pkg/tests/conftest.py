import numpy as np
import pytest

from strataflow.scenarios import builtin


@pytest.fixture(scope="session")
def ex1():
    return builtin("example1")


@pytest.fixture(scope="session")
def zeno():
    return builtin("zeno")


@pytest.fixture(scope="session")
def ex3():
    return builtin("ex3")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
