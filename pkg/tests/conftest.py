import os

import pytest
from hypothesis import HealthCheck, settings

from hjhomog.env import (PeriodicEnvironment, RandomEnvironment, nonconvex_benchmark,
                         quadratic_cosine, x_independent)

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=15, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

G_POLY = (1.0, 0.0, -2.0, 0.0, 1.0)     # (p^2 - 1)^2


def G(p):
    return (p * p - 1.0) ** 2


@pytest.fixture(scope="session")
def quad_env():
    return quadratic_cosine(1.0)


@pytest.fixture(scope="session")
def nonconvex_env():
    return nonconvex_benchmark(2.0)


@pytest.fixture(scope="session")
def g_env():
    return x_independent(G_POLY)


@pytest.fixture(scope="session")
def p2_env():
    return x_independent((0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def sine_env():
    """``H = p^2 + sin(2 pi x)``."""
    return PeriodicEnvironment(potential={"modes": [{"amp": 1.0, "freq": 1.0, "kind": "sin"}]})


@pytest.fixture(scope="session")
def shift_env():
    """``H = (p - 0.5 sin(2 pi x))^2``."""
    return PeriodicEnvironment(shift={"modes": [{"amp": 0.5, "freq": 1.0, "kind": "sin"}]})


@pytest.fixture(scope="session")
def random_env():
    return RandomEnvironment(7, "random_phase_trig", {"potential_amplitude": 1.0},
                             window=(0.0, 50.0))
