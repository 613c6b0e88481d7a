"""Periodic cell problem: all periodic solutions of the auxiliary ODE at a level."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .env import radius_bound
from .errors import BelowGround
from .ode import (OdeSolution, default_escape_radius, displacements, integrate_auxiliary,
                  integrate_backward)

ESCAPE_UP = math.inf
ESCAPE_DOWN = -math.inf
SCAN_TOL = 1e-7


@dataclass(eq=False)
class StationaryBranch:
    """A periodic solution at level ``lam`` with period mean ``theta``."""

    lam: float
    theta: float
    f_solution: OdeSolution
    initial_value: float
    stability_index: int
    period: float

    @property
    def lambda_(self):
        return self.lam

    @property
    def period_defect(self):
        ends = self.f_solution(np.array([0.0, self.period]))
        return abs(float(ends[1] - ends[0]))

    def _wrap(self, x):
        return np.mod(np.asarray(x, dtype=float), self.period)

    def __call__(self, x):
        out = self.f_solution(self._wrap(x))
        return out

    def derivative(self, x):
        return self.f_solution.derivative(self._wrap(x))

    def antiderivative(self, x):
        """``int_0^x f`` extended by periodicity (``theta x`` plus a periodic part)."""
        x = np.asarray(x, dtype=float)
        k = np.floor(x / self.period)
        r = x - k * self.period
        flat = np.atleast_1d(r)
        vals = np.array([self.f_solution.integral(0.0, float(t)) for t in flat]).reshape(r.shape)
        out = k * self.period * self.theta + vals
        return out if out.ndim else float(out)

    def profile(self, per_step=1):
        return self.f_solution.to_rows(per_step)

    def max_abs(self):
        _, f = self.f_solution.sample(8)
        return float(np.abs(f).max())


def branch_mean(branch):
    """Period mean of a branch by exact integration of the dense output."""
    sol = branch.f_solution if isinstance(branch, StationaryBranch) else branch
    period = branch.period if isinstance(branch, StationaryBranch) else (sol.span[1] - sol.span[0])
    return sol.integral(sol.x0, sol.x0 + period) / period


def _require_periodic(env):
    if env.period is None:
        raise TypeError("the cell problem needs a periodic environment")


def _ground(env, lam):
    envl = env.envelopes_for_level(lam)
    return envl, float(envl.gl_values[envl.p_grid.size // 2])


def _shoot_period(env, lam, p0, tol, esc, direction):
    if direction > 0:
        return integrate_auxiliary(env, lam, 0.0, p0, env.period, tol, esc)
    return integrate_backward(env, lam, env.period, p0, 0.0, tol, esc)


def _displacement(env, lam, p0, tol, esc, direction=1):
    if direction > 0:
        return float(displacements(env, lam, p0, 0.0, env.period, tol, esc)[0])
    return float(displacements(env, lam, p0, env.period, 0.0, tol, esc)[0])


def poincare_displacement(env, lam, p0, tol=1e-10, escape_radius=None):
    """``f(L; p0) - p0`` or a signed infinite marker when the trajectory escapes."""
    _require_periodic(env)
    esc = default_escape_radius(env, lam) if escape_radius is None else escape_radius
    return _displacement(env, lam, p0, tol, esc, 1)


def _refine(func, a, fa, b, fb, tol):
    """Root of ``func`` in ``[a, b]`` with opposite (possibly infinite) signs at the ends."""
    while not (math.isfinite(fa) and math.isfinite(fb)):
        if b - a <= tol:
            return 0.5 * (a + b), (a, fa, b, fb)
        m = 0.5 * (a + b)
        fm = func(m)
        if fm == 0.0:
            return m, (a, fa, b, fb)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b, fb = m, fm
    if fa == 0.0:
        return a, (a, fa, b, fb)
    if fb == 0.0:
        return b, (a, fa, b, fb)

    def safe(t):
        v = func(t)
        if not math.isfinite(v):
            return math.copysign(1e300, v)
        return v

    root = brentq(safe, a, b, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return root, (a, fa, b, fb)


def _make_branch(env, lam, p0, tol, esc, direction, stab):
    sol = _shoot_period(env, lam, p0, tol, esc, direction)
    if sol.terminal != "reached_end":
        return None
    theta = sol.integral(0.0, env.period) / env.period
    return StationaryBranch(lam=float(lam), theta=float(theta), f_solution=sol,
                            initial_value=float(sol(0.0)), stability_index=stab,
                            period=env.period)


def find_periodic_solutions(env, lam, scan_points=201, tol=1e-10):
    """Every periodic solution at level ``lam`` detectable by a sign-change scan.

    The displacement ``f(L; p0) - p0`` is sampled on ``[-R-1, R+1]`` with ``R`` the
    radius bound; each sign change (escape markers included) is refined to a root.
    Forward-repelling orbits are re-solved in backward time, where they attract.
    """
    _require_periodic(env)
    envl, g0 = _ground(env, lam)
    if lam < g0 - tol:
        raise BelowGround(f"level {lam:.9g} lies below gl(0) = {g0:.9g}")
    R = radius_bound(envl, max(lam, g0))
    esc = R + 1.0
    ps = np.linspace(-R - 1.0, R + 1.0, int(scan_points))

    def fwd(p):
        return _displacement(env, lam, p, tol, esc, 1)

    def bwd(p):
        return _displacement(env, lam, p, tol, esc, -1)

    # coarse-tolerance scan: only signs are needed; brackets are re-checked at tol
    scan_tol = max(tol, SCAN_TOL)
    ds = displacements(env, lam, ps, 0.0, env.period, scan_tol, esc)
    roots = []
    for i in range(ps.size - 1):
        fa, fb = ds[i], ds[i + 1]
        if fa == 0.0 or (fa > 0) == (fb > 0) and fb != 0.0:
            continue
        lo, hi = max(i - 1, 0), min(i + 2, ps.size - 1)
        fine = displacements(env, lam, ps[lo:hi + 1], 0.0, env.period, tol, esc)
        for j in range(fine.size - 1):
            a, b, ga, gb = float(ps[lo + j]), float(ps[lo + j + 1]), fine[j], fine[j + 1]
            if ga == 0.0:
                roots.append((a, 0, 1))
                continue
            if gb == 0.0 or (ga > 0) == (gb > 0):
                continue
            stab = 1 if gb > ga else -1
            direction = 1
            if stab > 0:
                ba, bb = bwd(a), bwd(b)
                if ba != 0.0 and bb != 0.0 and (ba > 0) != (bb > 0):
                    root, _ = _refine(bwd, a, ba, b, bb, tol)
                    direction = -1
            if direction > 0:
                root, _ = _refine(fwd, a, ga, b, gb, tol)
            roots.append((root, stab, direction))
    roots.sort(key=lambda r: r[0])
    merged = []
    for r in roots:
        if merged and abs(r[0] - merged[-1][0]) <= 10 * tol:
            continue
        merged.append(r)
    branches = []
    for p0, stab, direction in merged:
        br = _make_branch(env, lam, p0, tol, esc, direction, stab)
        if br is not None:
            branches.append(br)
    branches.sort(key=lambda b: b.theta)
    return branches


def _preferred_direction(env, p0):
    """Backward time when the orbit through ``p0`` is expected to repel forward."""
    xs = np.linspace(0.0, env.period, 257, endpoint=False)
    rate = np.mean(env.dh_dp_eval(p0, xs) / env.a_eval(xs))
    return -1 if rate < 0 else 1


def _level_in_direction(env, p0, lo, hi, tol, esc, direction):
    # forward displacement increases with the level, backward decreases
    def disp(lam):
        return direction * _displacement(env, lam, p0, tol, esc, direction)

    root, _ = _refine(disp, lo, disp(lo), hi, disp(hi), tol)
    return float(root)


def level_through(env, p0, tol=1e-10, return_direction=False):
    """The unique level whose periodic solution passes through ``f(0) = p0``.

    The displacement is strictly monotone in the level and changes sign between
    ``min_x H(p0, x)`` and ``max_x H(p0, x)``.
    """
    _require_periodic(env)
    xs = np.linspace(0.0, env.period, 257)
    h = env.h_eval(p0, xs)
    lo, hi = float(h.min()), float(h.max())
    pad = 1e-9 * max(1.0, abs(lo), abs(hi))
    lo, hi = lo - pad, hi + pad
    esc = max(default_escape_radius(env, hi), abs(p0) + 1.0)
    first = _preferred_direction(env, p0)
    result = None
    for direction in (first, -first):
        lam = _level_in_direction(env, p0, lo, hi, tol, esc, direction)
        d = _displacement(env, lam, p0, tol, esc, direction)
        if math.isfinite(d) and abs(d) <= max(1e3 * tol, 1e-7):
            result = (lam, direction)
            break
        if result is None:
            result = (lam, direction)
    return result if return_direction else result[0]


def branch_through(env, p0, tol=1e-10):
    """The periodic solution through ``p0`` (at ``x = 0`` forward, ``x = L`` backward)."""
    lam, direction = level_through(env, p0, tol, return_direction=True)
    esc = max(default_escape_radius(env, lam), abs(p0) + 1.0)
    br = _make_branch(env, lam, p0, tol, esc, direction, -direction)
    if br is None:
        raise RuntimeError(f"periodic solution through p0={p0:.9g} escaped at lam={lam:.12g}")
    return br


def theta_through(env, p0, tol=1e-10):
    return branch_through(env, p0, tol).theta


def lambda_of_theta(env, theta, tol=1e-10, p_bracket=None):
    """The branch with mean ``theta``, by root finding on the increasing map ``p0 -> theta``."""
    _require_periodic(env)
    if p_bracket is None:
        a, b = theta - 1.0, theta + 1.0
        while theta_through(env, a, tol) > theta:
            a -= 2.0 * (b - a)
        while theta_through(env, b, tol) < theta:
            b += 2.0 * (b - a)
    else:
        a, b = p_bracket
    p0 = brentq(lambda p: theta_through(env, p, tol) - theta, a, b, xtol=tol, rtol=1e-14)
    return branch_through(env, p0, tol)
