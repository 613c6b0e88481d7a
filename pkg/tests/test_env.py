import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hjhomog.env import (Field, PeriodicEnvironment, RandomEnvironment, compute_envelopes,
                         environment_from_config, lipschitz_constant, radius_bound,
                         validate_assumptions, x_independent)
from hjhomog.errors import (BelowGround, ConfigError, NonFinite, NonPositiveDiffusion,
                            NotCoercive, OutOfRange)

GRID = np.linspace(-4.0, 4.0, 801)


# -- fields and media ---------------------------------------------------------

def test_field_modes_and_bumps():
    f = Field(const=0.5, modes=[[2.0, 1.0, 0.0]], bump_amps=[1.0], bump_centers=[3.0],
              bump_width=0.5)
    x = np.array([0.0, 0.25, 3.0])
    bump = np.exp(-0.5 * ((x - 3.0) / 0.5) ** 2)
    assert np.allclose(f(x), 0.5 + 2.0 * np.cos(2 * np.pi * x) + bump)
    assert Field.from_spec(f.to_spec())(x) == pytest.approx(f(x))


def test_sin_mode_field():
    f = Field.from_spec({"modes": [{"amp": 1.0, "freq": 2.0, "kind": "sin"}]})
    x = np.linspace(0, 1, 9)
    assert np.allclose(f(x), np.sin(4 * np.pi * x))


def test_periodic_env_checks_period():
    with pytest.raises(ValueError):
        PeriodicEnvironment(period=1.0, potential={"modes": [[1.0, 0.5, 0.0]]})
    env = PeriodicEnvironment(period=2.0, potential={"modes": [[1.0, 0.5, 0.0]]})
    x = np.linspace(0, 2, 7)
    assert np.allclose(env.h_eval(0.3, x + 2.0), env.h_eval(0.3, x))


def test_hamiltonian_form(shift_env):
    x = np.linspace(0, 1, 11)
    p = 0.7
    assert np.allclose(shift_env.h_eval(p, x), (p - 0.5 * np.sin(2 * np.pi * x)) ** 2)
    assert np.allclose(shift_env.dh_dp_eval(p, x), 2 * (p - 0.5 * np.sin(2 * np.pi * x)))


def test_random_env_deterministic():
    a = RandomEnvironment(3, "random_phase_trig", {"potential_amplitude": 0.8})
    b = RandomEnvironment(3, "random_phase_trig", {"potential_amplitude": 0.8})
    c = RandomEnvironment(4, "random_phase_trig", {"potential_amplitude": 0.8})
    x = np.linspace(0, 30, 301)
    assert np.array_equal(a.h_eval(1.0, x), b.h_eval(1.0, x))
    assert not np.allclose(a.h_eval(1.0, x), c.h_eval(1.0, x))
    assert np.abs(a.potential(x)).max() <= 0.8 + 1e-12


def test_random_env_diffusion_floor():
    env = RandomEnvironment(1, "random_phase_trig", {"diffusion_mean": 0.7,
                                                     "diffusion_amplitude": 0.2})
    assert env.a_floor == pytest.approx(0.5)
    a = env.a_eval(np.linspace(0, 100, 2001))
    assert a.min() >= 0.5 - 1e-12 and a.max() <= 0.9 + 1e-12
    with pytest.raises(NonPositiveDiffusion):
        RandomEnvironment(1, "random_phase_trig", {"diffusion_mean": 0.5,
                                                   "diffusion_amplitude": 0.6})


def test_smoothed_bumps_env():
    env = RandomEnvironment(5, "smoothed_bumps", {"bump_density": 2.0, "smoothing_width": 0.2},
                            window=(0.0, 20.0))
    assert env.potential.bump_amps.size > 20
    assert np.all(env.a_eval(np.linspace(0, 20, 11)) == 1.0)


def test_environment_from_config_errors():
    with pytest.raises(ConfigError) as exc:
        environment_from_config({"kind": "periodic"})
    assert exc.value.field == "environment.period"
    with pytest.raises(ConfigError) as exc:
        environment_from_config({"kind": "lattice"})
    assert exc.value.field == "environment.kind"
    with pytest.raises(ConfigError):
        environment_from_config({"kind": "random_phase_trig"})


# -- validate_assumptions ------------------------------------------------------

def test_validate_p_squared():
    rep = validate_assumptions(x_independent((0.0, 0.0, 1.0)), 4.0, 32)
    assert rep.kappa_hat == 0.0
    assert rep.ok
    for R, K in rep.lipschitz_table.items():
        assert K == pytest.approx(2 * R, rel=1e-2)


def test_validate_sine(sine_env):
    rep = validate_assumptions(sine_env, 4.0, 64)
    assert rep.ok
    for R, K in rep.lipschitz_table.items():
        assert abs(K - 2 * R) <= 0.05 * 2 * R
    for R, (r, m) in rep.modulus_table.items():
        assert np.all(m <= 2 * np.pi * r * (1 + 1e-9))


def test_validate_random_anchor(random_env):
    rep = validate_assumptions(random_env, 3.0, 64)
    dense = validate_assumptions(random_env, 3.0, 640)
    assert rep.ok and dense.ok
    assert rep.kappa_hat == 0.0
    anchors = {1.0: 1.965, 1.5: 2.985, 3.0: 5.985}
    for R, K in anchors.items():
        assert rep.lipschitz_table[R] == pytest.approx(K, abs=1e-9)
        assert rep.lipschitz_table[R] == pytest.approx(dense.lipschitz_table[R], rel=2e-2)
    assert math.isfinite(rep.lipschitz(2.0))
    with pytest.raises(OutOfRange):
        rep.lipschitz(10.0)


def test_validate_errors():
    bad_a = PeriodicEnvironment(diffusion={"const": 0.5, "modes": [[0.6, 1.0, 0.0]]})
    with pytest.raises(NonPositiveDiffusion):
        validate_assumptions(bad_a, 2.0, 32)
    with np.errstate(all="ignore"):
        with pytest.raises(NonFinite):
            validate_assumptions(PeriodicEnvironment(poly=(0.0, 0.0, np.inf)), 2.0, 32)
    with pytest.raises(ValueError):
        validate_assumptions(x_independent((0, 0, 1)), 2.0, 8)
    with pytest.raises(ValueError):
        validate_assumptions(x_independent((0, 0, 1)), -1.0, 32)


def test_validate_flags_large_diffusion():
    env = PeriodicEnvironment(diffusion=1.5)
    names = [v[0] for v in validate_assumptions(env, 2.0, 32).violations]
    assert "A-range" in names


def test_validate_flags_jump():
    class Jumpy(PeriodicEnvironment):
        def h_eval(self, p, x):
            return super().h_eval(p, x) + np.where(np.mod(x, 1.0) < 0.503, 0.0, 1.0)

    names = [v[0] for v in validate_assumptions(Jumpy(), 2.0, 64).violations]
    assert "H4-modulus" in names


def test_validate_flags_non_coercive():
    env = x_independent((0.0, 1.0))
    names = [v[0] for v in validate_assumptions(env, 2.0, 32).violations]
    assert "H2-coercivity" in names


# -- envelopes -----------------------------------------------------------------

def test_envelopes_sine(sine_env):
    e = compute_envelopes(sine_env, GRID)
    assert np.allclose(e.gl_values, GRID ** 2 - 1, atol=1e-12)
    assert np.allclose(e.gu_values, GRID ** 2 + 1, atol=1e-12)


def test_envelopes_shift(shift_env):
    e = compute_envelopes(shift_env, GRID)
    assert np.allclose(e.gl_values, np.maximum(np.abs(GRID) - 0.5, 0) ** 2, atol=1e-12)
    assert np.allclose(e.gu_values, (np.abs(GRID) + 0.5) ** 2, atol=1e-12)


def test_envelopes_random_dominance(random_env):
    e = compute_envelopes(random_env, GRID, x_samples=256)
    rng = np.random.default_rng(11)
    p = rng.uniform(-4, 4, 1000)
    x = rng.uniform(*random_env.window, 1000)
    h = random_env.h_eval(p, x)
    tol = e.interp_tol
    assert np.all(e.gl(p) - tol <= h) and np.all(h <= e.gu(p) + tol)
    # the conservative step versions need no tolerance
    assert np.all(e.lower(p) <= h + 1e-12)


def test_envelopes_errors():
    with pytest.raises(NotCoercive):
        compute_envelopes(x_independent((0.0, 1.0)), GRID)
    with pytest.raises(ValueError):
        compute_envelopes(x_independent((0.0, 0.0, 1.0)), np.linspace(-1, 2, 31))


def test_envelope_rows_and_radius(sine_env):
    e = compute_envelopes(sine_env, GRID)
    assert e.rows().shape == (GRID.size, 3)
    assert e.radius_bound(3.0) == pytest.approx(2.0, abs=1e-12)
    assert radius_bound(e, -1.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(BelowGround):
        radius_bound(e, -1.5)
    with pytest.raises(OutOfRange):
        radius_bound(e, 100.0)


def test_radius_bound_random_table(random_env):
    e = compute_envelopes(random_env, GRID, x_samples=256)
    R = radius_bound(e, 2.0)
    # independent scan of the stored table
    pos = GRID >= 0
    p, g = GRID[pos], e.gl_values[pos]
    k = np.nonzero(g <= 2.0)[0].max()
    lo, hi = p[k], p[k + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = np.interp(mid, p, g)
        lo, hi = (mid, hi) if val <= 2.0 else (lo, mid)
    assert R == pytest.approx(lo, abs=1e-12)


def test_lipschitz_constant(sine_env):
    assert lipschitz_constant(sine_env, 2.0) == pytest.approx(4.0, rel=1e-3)


# -- properties ----------------------------------------------------------------

@given(amp=st.floats(0.0, 2.0), shift=st.floats(0.0, 1.0), q=st.floats(0.0, 1.0))
def test_envelope_shape_property(amp, shift, q):
    env = PeriodicEnvironment(potential={"modes": [[amp, 1.0, 0.3]]},
                              shift={"modes": [[shift, 1.0, 0.0]]}, poly=(0.0, q, 1.0))
    e = compute_envelopes(env, GRID)
    mid = GRID.size // 2
    assert np.all(e.gl_values <= e.gu_values)
    assert np.array_equal(e.gl_values, e.gl_values[::-1])
    assert np.array_equal(e.gu_values, e.gu_values[::-1])
    assert np.all(np.diff(e.gl_values[mid:]) >= 0) and np.all(np.diff(e.gu_values[mid:]) >= 0)
    xs = np.linspace(0, 1, 64, endpoint=False)
    h = env.h_eval(GRID[:, None], xs[None, :])
    assert np.all(e.gl_values[:, None] <= h + 1e-12)
    assert np.all(h <= e.gu_values[:, None] + 1e-12)


@given(l1=st.floats(-1.0, 10.0), l2=st.floats(-1.0, 10.0))
def test_radius_bound_monotone(sine_env, l1, l2):
    e = sine_env.envelopes_for_level(10.0)
    lo, hi = sorted((l1, l2))
    assert radius_bound(e, lo) <= radius_bound(e, hi)
