import numpy as np
import pytest

from onlinedefer.core import AugmentedInput, ExpertSet, FeatureVector, LabelSpace
from onlinedefer.hypothesis import WeightMatrix


def make_input(n, n_e, x, avail=(), t=1):
    return AugmentedInput(FeatureVector.full(np.asarray(x, dtype=float)), ExpertSet(tuple(avail)), t, LabelSpace(n, n_e))


def zero_weights(n, n_e, d, bound=None):
    return WeightMatrix(LabelSpace(n, n_e), d, bound=bound)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
