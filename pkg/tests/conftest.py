import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from beamlattice.core import PosteriorGrid

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def g1():
    """Two frames, one real token a: t1 (a .6, blank .4), t2 (a .5, blank .5)."""
    return PosteriorGrid.from_probs([[0.6, 0.4], [0.5, 0.5]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def log(x):
    return math.log(x)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
