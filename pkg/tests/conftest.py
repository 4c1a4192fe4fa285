import sys

import numpy as np
import pytest

from photonfilter.operators import SystemModel
from photonfilter.photons import PulseSet


@pytest.fixture
def atom():
    return SystemModel.two_level_atom()


@pytest.fixture
def excited_atom():
    return SystemModel.two_level_atom(excited=True)


@pytest.fixture
def two_pulses():
    return PulseSet.gaussians([1.46, 2.92], [3.0, 3.5], 8.0, 2e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        terminalreporter.write_line(verdicts[number].line())
