"""Independent reference solutions used to audit the solvers.

The Hill oracle covers ``a = 1``, ``H = p^2 + V(x)``: with ``f = u'/u`` the cell
equation ``f' + f^2 + V = lam`` becomes the linear equation ``u'' = (lam - V) u``.
A periodic ``f`` with mean ``theta`` corresponds to a positive Floquet solution
with multiplier ``exp(theta L)``, so ``trace(M(lam)) = 2 cosh(theta L)`` where
``M`` is the monodromy matrix over one period.
"""
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


def _check_hill(env):
    poly = np.zeros(3)
    poly[: min(3, env.poly.size)] = env.poly[:3]
    if env.poly.size != 3 or poly[0] != 0 or poly[1] != 0 or poly[2] != 1:
        raise ValueError("Hill oracle needs H = p^2 + V(x)")
    if not (env.diffusion.is_constant and env.diffusion.const == 1.0 and env.shift.is_constant
            and env.shift.const == 0.0):
        raise ValueError("Hill oracle needs a = 1 and no shift")
    if env.period is None:
        raise ValueError("Hill oracle needs a periodic medium")


def _potential(env):
    """Scalar closed form of the potential, independent of the vectorised kernels."""
    fld = env.potential
    if fld.bump_amps.size:
        raise ValueError("Hill oracle needs a trigonometric potential")
    const = fld.const
    modes = [(a, 2.0 * math.pi * f, ph) for a, f, ph in fld.modes.tolist()]

    def v(x):
        return const + sum(a * math.cos(w * x + ph) for a, w, ph in modes)

    return v


def monodromy(env, lam, rtol=1e-12, atol=1e-13):
    """Fundamental matrix of ``u'' = (lam - V) u`` over one period (DOP853)."""
    _check_hill(env)
    pot = _potential(env)

    def rhs(x, y):
        q = lam - pot(x)
        return [y[1], q * y[0], y[3], q * y[2]]

    sol = solve_ivp(rhs, (0.0, env.period), [1.0, 0.0, 0.0, 1.0], method="DOP853",
                    rtol=rtol, atol=atol)
    u1, du1, u2, du2 = sol.y[:, -1]
    return np.array([[u1, u2], [du1, du2]])


def discriminant(env, lam):
    return float(np.trace(monodromy(env, lam)))


def principal_level(env, step=0.05):
    """Largest ``lam`` with ``trace M = 2``; periodic branches exist exactly above it."""
    xs = np.linspace(0.0, env.period, 512, endpoint=False)
    v = env.potential(xs)
    hi = float(v.max()) + 1.0
    lo = float(v.mean()) - 1.0
    lam = hi
    while lam > lo:
        nxt = lam - step
        if discriminant(env, nxt) <= 2.0:
            return brentq(lambda s: discriminant(env, s) - 2.0, nxt, lam, xtol=1e-14, rtol=1e-14)
        lam = nxt
    raise RuntimeError("principal level not bracketed")


def hill_theta(env, lam):
    """Nonnegative branch mean ``theta`` at level ``lam`` (None below the principal level)."""
    d = discriminant(env, lam)
    if d < 2.0:
        return None
    return math.acosh(d / 2.0) / env.period


def hill_lambda(env, theta):
    """Level ``lam(theta)`` solving ``trace M(lam) = 2 cosh(theta L)``."""
    lam0 = principal_level(env)
    target = 2.0 * math.cosh(theta * env.period)
    if target <= 2.0:
        return lam0
    hi = lam0 + 1.0
    while discriminant(env, hi) < target:
        hi = lam0 + 2.0 * (hi - lam0)
    return brentq(lambda s: discriminant(env, s) - target, lam0, hi, xtol=1e-14, rtol=1e-14)


def hill_initial_value(env, lam, sign=1):
    """``f(0) = u'(0)/u(0)`` of the branch with mean ``sign * theta``."""
    m = monodromy(env, lam)
    d = np.trace(m)
    root = math.sqrt(max(d * d - 4.0, 0.0))
    mu = (d + root) / 2.0 if sign > 0 else (d - root) / 2.0
    return (mu - m[0, 0]) / m[0, 1]


def quadratic_flow(lam, p0, x):
    """Closed-form ``f`` for ``f' = lam - f^2`` with ``lam > 0`` and ``|p0| < sqrt(lam)``."""
    r = math.sqrt(lam)
    return r * np.tanh(r * np.asarray(x) + math.atanh(p0 / r))
