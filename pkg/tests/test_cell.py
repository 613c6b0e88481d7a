import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjhomog.cell import (branch_mean, find_periodic_solutions, lambda_of_theta, level_through,
                          poincare_displacement)
from hjhomog.env import PeriodicEnvironment, compute_envelopes
from hjhomog.errors import BelowGround
from hjhomog.ode import integrate_auxiliary
from hjhomog.oracles import hill_lambda, hill_theta, principal_level

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def sine_solution_env():
    """Potential for which ``f = sin(2 pi x)`` solves ``f' + f^2 + V = 0``."""
    return PeriodicEnvironment(potential={"const": -0.5,
                                          "modes": [[-TWO_PI, 1.0, 0.0], [0.5, 2.0, 0.0]]})


def test_displacement_fixed_point(p2_env):
    assert poincare_displacement(p2_env, 4.0, 2.0) == 0.0


def test_displacement_flow_oracle(p2_env):
    d = poincare_displacement(p2_env, 4.0, 1.9)
    exact = 2.0 * math.tanh(2.0 + math.atanh(0.95)) - 1.9
    assert d == pytest.approx(exact, abs=1e-9)
    assert d > 0


def test_displacement_escape_marker(p2_env):
    assert poincare_displacement(p2_env, -1.0, 0.0) == -math.inf


def test_p_squared_branches(p2_env):
    br = find_periodic_solutions(p2_env, 4.0)
    assert [b.theta for b in br] == pytest.approx([-2.0, 2.0], abs=1e-9)
    for b in br:
        _, f = b.f_solution.sample(2)
        assert np.allclose(f, b.theta, atol=1e-9)


def test_hill_branches(quad_env):
    br = find_periodic_solutions(quad_env, 3.0)
    rho = hill_theta(quad_env, 3.0)
    assert len(br) == 2
    assert br[0].theta == pytest.approx(-rho, abs=1e-6)
    assert br[1].theta == pytest.approx(rho, abs=1e-6)
    assert br[1].lambda_ == 3.0


def test_below_principal_level_is_empty(quad_env):
    lam0 = principal_level(quad_env)
    assert find_periodic_solutions(quad_env, lam0 - 0.5) == []


def test_below_ground_raises(quad_env):
    with pytest.raises(BelowGround):
        find_periodic_solutions(quad_env, -1.5)


def test_branch_mean_constant(p2_env):
    b = find_periodic_solutions(p2_env, 4.0)[1]
    assert branch_mean(b) == pytest.approx(2.0, abs=1e-12)


def test_branch_mean_sine(sine_solution_env):
    sol = integrate_auxiliary(sine_solution_env, 0.0, 0.0, 0.0, 1.0, tol=1e-12)
    x = np.linspace(0, 1, 101)
    assert np.allclose(sol(x), np.sin(TWO_PI * x), atol=1e-8)
    assert abs(branch_mean(sol)) <= 1e-9


def test_sine_branch_found(sine_solution_env):
    # level 0 is the bottom of H-bar here, so the two branches nearly merge
    br = find_periodic_solutions(sine_solution_env, 0.0)
    assert br
    x = np.linspace(0, 1, 64)
    for b in br:
        assert abs(b.theta) <= 1e-4
        assert np.abs(b(x) - np.sin(TWO_PI * x)).max() <= 1e-4


def test_branch_mean_hill(quad_env):
    b = find_periodic_solutions(quad_env, 3.0)[1]
    assert branch_mean(b) == pytest.approx(hill_theta(quad_env, 3.0), abs=1e-5)


def test_branch_invariants(nonconvex_env):
    envl = compute_envelopes(nonconvex_env, np.linspace(-4, 4, 8001))
    for lam in (0.5, 1.5, 4.0):
        R = envl.radius_bound(lam)
        for b in find_periodic_solutions(nonconvex_env, lam):
            assert b.period_defect <= 1e-8
            assert b.max_abs() <= R + 1e-8
            assert envl.gl(b.theta) - 1e-6 <= lam <= envl.gu(b.theta) + 1e-6


def test_refinement_stability(quad_env):
    a = find_periodic_solutions(quad_env, 3.0, tol=1e-10)
    b = find_periodic_solutions(quad_env, 3.0, tol=5e-11)
    for x, y in zip(a, b):
        assert abs(x.theta - y.theta) <= 10 * 1e-10


def test_lambda_of_theta(quad_env):
    b = lambda_of_theta(quad_env, 1.0)
    assert b.theta == pytest.approx(1.0, abs=1e-9)
    assert b.lam == pytest.approx(hill_lambda(quad_env, 1.0), abs=1e-8)
    assert level_through(quad_env, b.initial_value) == pytest.approx(b.lam, abs=1e-8)


def test_periodic_only(random_env):
    with pytest.raises(TypeError):
        find_periodic_solutions(random_env, 3.0)


@settings(max_examples=10, deadline=None)
@given(l1=st.floats(0.3, 5.0), l2=st.floats(0.3, 5.0))
def test_branches_never_cross(nonconvex_env, l1, l2):
    x = np.linspace(0.0, 1.0, 257)
    pool = find_periodic_solutions(nonconvex_env, l1) + find_periodic_solutions(nonconvex_env, l2)
    pool.sort(key=lambda b: b.theta)
    for lo, hi in zip(pool[:-1], pool[1:]):
        if hi.theta - lo.theta > 1e-6:
            assert np.min(hi(x) - lo(x)) > 0


@settings(max_examples=8, deadline=None)
@given(theta=st.floats(0.05, 2.0))
def test_hill_property(quad_env, theta):
    b = lambda_of_theta(quad_env, theta)
    assert b.lam == pytest.approx(hill_lambda(quad_env, theta), abs=1e-7)
