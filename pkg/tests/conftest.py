import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phasepredict.noise import PowerSpectrum

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CUTOFF = 2 * math.pi * 25.0


@pytest.fixture
def flat_top():
    return PowerSpectrum.flat_top(0.04 / CUTOFF, CUTOFF)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ar1(rho, length, seed, sigma=1.0):
    """Stationary AR(1) series x[t] = rho x[t-1] + e[t] with unit marginal variance."""
    g = np.random.default_rng(seed)
    e = g.standard_normal(length) * sigma * math.sqrt(1 - rho ** 2)
    x = np.empty(length)
    x[0] = g.standard_normal() * sigma
    for t in range(1, length):
        x[t] = rho * x[t - 1] + e[t]
    return x


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
