import numpy as np
import pytest

from hjhomog.effective import (Gap, brute_force_inventory, build_effective,
                               effective_from_samples, lipschitz_audit, query)
from hjhomog.errors import BelowGround, NoGap, OutOfRange, SweepTooCoarse
from hjhomog.oracles import hill_theta

from conftest import G


@pytest.fixture(scope="module")
def eff_g(g_env):
    return build_effective(g_env, 0.0, 9.0, 61)


@pytest.fixture(scope="module")
def eff_quad(quad_env):
    return build_effective(quad_env, 0.0, 6.0, 41, densify=0.05)


@pytest.fixture(scope="module")
def eff_nonconvex(nonconvex_env):
    return build_effective(nonconvex_env, 0.2, 6.0, 41)


@pytest.fixture
def plateau(g_env):
    th = np.array([-2.0, -1.0, 1.0, 2.0])
    envl = g_env.envelopes_for_level(9.0)
    gap = Gap(-1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    return effective_from_samples(list(zip(th, G(th))), envl, [gap])


def test_x_independent_exact(eff_g):
    assert eff_g.gaps == []
    assert eff_g.theta_range[0] <= -2.0 + 1e-9 and eff_g.theta_range[1] >= 2.0 - 1e-9
    assert np.abs(eff_g.lam - G(eff_g.theta)).max() <= 1e-6


def test_samples_strictly_increasing(eff_g, eff_quad):
    for eff in (eff_g, eff_quad):
        assert np.all(np.diff(eff.theta) > 0)


def test_query_x_independent(g_env):
    eff = build_effective(g_env, 0.0, 9.0, 61, densify=0.02)
    assert query(eff, 0.7) == pytest.approx(G(0.7), abs=1e-5)


def test_quadratic_against_hill(quad_env, eff_quad):
    assert eff_quad.gaps == []
    for t, lam in eff_quad.e_samples:
        if abs(t) > 1e-3:
            assert abs(t) == pytest.approx(hill_theta(quad_env, lam), abs=1e-4)


def test_nonconvex_inventory(nonconvex_env, eff_nonconvex):
    brute, samples = brute_force_inventory(nonconvex_env, -2.2, 2.2, 221)
    assert len(eff_nonconvex.gaps) == len(brute) == 0
    # the brute-force samples sit on the level-sweep curve
    th = np.array([s.theta for s in samples])
    lam = np.array([s.lam for s in samples])
    inside = (th > eff_nonconvex.theta_range[0]) & (th < eff_nonconvex.theta_range[1])
    assert np.abs(query(eff_nonconvex, th[inside]) - lam[inside]).max() <= 5e-2


def test_nonconvex_shape(eff_nonconvex):
    # local maximum at theta = 0, minima near |theta| = 0.9
    assert query(eff_nonconvex, 0.0) == pytest.approx(0.90291, abs=1e-3)
    assert query(eff_nonconvex, 0.0) > query(eff_nonconvex, 0.5) > query(eff_nonconvex, 0.9)


def test_envelope_bracketing(eff_nonconvex):
    envl = eff_nonconvex.envelopes
    th, lam = eff_nonconvex.theta, eff_nonconvex.lam
    assert np.all(envl.gl(th) - 1e-6 <= lam) and np.all(lam <= envl.gu(th) + 1e-6)


def test_query_errors(eff_g):
    with pytest.raises(OutOfRange):
        query(eff_g, 5.0)
    with pytest.raises(NoGap):
        eff_g.gap(0)


def test_plateau_query(plateau):
    assert query(plateau, 0.0) == 0.0
    assert query(plateau, 0.3) == 0.0
    assert query(plateau, 1.0) == pytest.approx(G(1.0), abs=1e-12)
    assert query(plateau, 1.0 - 1e-9) == pytest.approx(query(plateau, 1.0), abs=1e-6)
    assert plateau.region(0.2) == "gap_0" and plateau.region(1.5) == "E"
    rows = plateau.rows()
    assert ("gap_0" in [r[2] for r in rows]) and rows == sorted(rows, key=lambda r: r[0])
    assert plateau.gap(0).theta_L == -1.0
    with pytest.raises(NoGap):
        plateau.gap(3)


def test_lipschitz_audit_x_independent(g_env, eff_g):
    audit = lipschitz_audit(eff_g, g_env)
    top = max(audit)
    assert audit[top][1] <= 24.0 + 1e-6
    for K, slope in audit.values():
        assert slope <= K + 1e-8


def test_lipschitz_audit_quadratic(quad_env, eff_quad):
    for R, (K, slope) in lipschitz_audit(eff_quad, quad_env).items():
        assert slope <= 2 * (R + 0.1)
        assert slope <= K + 1e-8


def test_lipschitz_audit_plateau(g_env, plateau):
    audit = lipschitz_audit(plateau, g_env)
    # the plateau is excluded; only the two outer segments remain
    assert max(s for _, s in audit.values()) == pytest.approx(9.0)


def test_unbounded_samples(quad_env):
    small = build_effective(quad_env, 0.0, 3.0, 11, stability_check=False)
    large = build_effective(quad_env, 0.0, 12.0, 11, stability_check=False)
    assert large.theta_range[1] > small.theta_range[1] + 1.0
    assert large.theta_range[0] < small.theta_range[0] - 1.0


def test_grid_refinement_stability(quad_env):
    a = build_effective(quad_env, 0.0, 6.0, 21, stability_check=False)
    b = build_effective(quad_env, 0.0, 6.0, 41, stability_check=False)
    th = np.linspace(-1.5, 1.5, 13)
    # interpolation error estimate: second differences of the coarse table
    est = np.abs(np.diff(a.lam, 2)).max()
    assert np.abs(query(a, th) - query(b, th)).max() <= 5 * est


def test_build_errors(quad_env):
    with pytest.raises(BelowGround):
        build_effective(quad_env, -3.0, 3.0, 11)
    with pytest.raises(SweepTooCoarse):
        build_effective(quad_env, 3.0, 3.1, 1, stability_check=False)
    with pytest.raises(ValueError):
        build_effective(quad_env, 0.0, 1.0, 5, theta_target=3.0)
