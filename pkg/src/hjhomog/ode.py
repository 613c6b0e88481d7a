"""Adaptive integration of ``a(x) f' + H(f, x) = lam``, strip shooting and trapping."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .env import radius_bound
from .errors import NotOrdered, StepUnderflow, WrongSigns

TERMINAL = {
    kernels.STATUS_REACHED_END: "reached_end",
    kernels.STATUS_ESCAPED_ABOVE: "escaped_above",
    kernels.STATUS_ESCAPED_BELOW: "escaped_below",
}

RESIDUAL_POINTS = 16
MAX_STEPS = 10_000_000


class OdeSolution:
    """Dense-output solution along ``x = x0 + direction * s``.

    Between accepted nodes the solution is Shampine's quartic interpolant, so
    values, derivatives and integrals are available anywhere on the covered span.
    """

    def __init__(self, env, lam, x0, direction, s_nodes, y_nodes, q_coef, terminal, s_stop):
        self.env = env
        self.lam = float(lam)
        self.x0 = float(x0)
        self.direction = 1.0 if direction > 0 else -1.0
        self.s_nodes = np.asarray(s_nodes, dtype=float)
        self.y_nodes = np.asarray(y_nodes, dtype=float)
        self.q_coef = np.asarray(q_coef, dtype=float).reshape(-1, 4)
        self.terminal = terminal
        self.s_stop = float(s_stop)
        h = np.diff(self.s_nodes)
        q = self.q_coef
        step_int = h * self.y_nodes[:-1] + h * h * (
            q[:, 0] / 2 + q[:, 1] / 3 + q[:, 2] / 4 + q[:, 3] / 5)
        self._cum = np.concatenate([[0.0], np.cumsum(step_int)])

    # -- geometry --------------------------------------------------------
    @property
    def lambda_(self):
        return self.lam

    @property
    def x_nodes(self):
        x = self.x0 + self.direction * self.s_nodes
        return x if self.direction > 0 else x[::-1]

    @property
    def f_values(self):
        return self.y_nodes if self.direction > 0 else self.y_nodes[::-1]

    @property
    def x_start(self):
        return self.x0

    @property
    def x_stop(self):
        """Where integration stopped (the escape point for escaped trajectories)."""
        return self.x0 + self.direction * self.s_stop

    @property
    def span(self):
        a, b = self.x_start, self.x_stop
        return (a, b) if a <= b else (b, a)

    @property
    def n_steps(self):
        return self.q_coef.shape[0]

    @property
    def survived(self):
        return self.terminal == "reached_end"

    # -- dense output ---------------------------------------------------------
    def _locate(self, x):
        s = self.direction * (np.asarray(x, dtype=float) - self.x0)
        slack = 1e-9 * max(1.0, self.s_stop)
        if np.any(s < -slack) or np.any(s > self.s_nodes[-1] + slack):
            raise ValueError("evaluation point outside the integrated span")
        if self.n_steps == 0:
            return s, None, None, None
        i = np.clip(np.searchsorted(self.s_nodes, s, side="right") - 1, 0, self.n_steps - 1)
        h = self.s_nodes[i + 1] - self.s_nodes[i]
        sig = (s - self.s_nodes[i]) / h
        return s, i, h, sig

    def __call__(self, x):
        s, i, h, sig = self._locate(x)
        if i is None:
            return np.full(np.shape(s), self.y_nodes[0]) if np.ndim(s) else float(self.y_nodes[0])
        q = self.q_coef[i].T
        out = self.y_nodes[i] + h * sig * (q[0] + sig * (q[1] + sig * (q[2] + sig * q[3])))
        return out if np.ndim(out) else float(out)

    def derivative(self, x):
        s, i, h, sig = self._locate(x)
        if i is None:
            x = np.asarray(x, dtype=float)
            out = (self.lam - self.env.h_eval(self.y_nodes[0], x)) / self.env.a_eval(x)
            return out if np.ndim(out) else float(out)
        q = self.q_coef[i].T
        dyds = q[0] + sig * (2 * q[1] + sig * (3 * q[2] + sig * 4 * q[3]))
        out = self.direction * dyds
        return out if np.ndim(out) else float(out)

    def _cumulative(self, s, i, h, sig):
        q = self.q_coef[i].T
        part = h * (sig * self.y_nodes[i] + h * (
            sig ** 2 * q[0] / 2 + sig ** 3 * q[1] / 3 + sig ** 4 * q[2] / 4 + sig ** 5 * q[3] / 5))
        return self._cum[i] + part

    def integral(self, xa, xb):
        """``int_xa^xb f(x) dx`` by exact integration of the dense output."""
        if self.n_steps == 0:
            return float(self.y_nodes[0] * (xb - xa))
        vals = []
        for x in (xa, xb):
            s, i, h, sig = self._locate(x)
            vals.append(self._cumulative(s, i, h, sig))
        return float(self.direction * (vals[1] - vals[0]))

    def sample(self, per_step=4):
        """Nodes plus ``per_step - 1`` interior points per step, ordered by x."""
        if self.n_steps == 0:
            return np.array([self.x0]), self.y_nodes[:1].copy()
        sig = np.arange(per_step) / per_step
        s = (self.s_nodes[:-1, None] + np.diff(self.s_nodes)[:, None] * sig).ravel()
        s = np.append(s, self.s_nodes[-1])
        s = s[s <= self.s_stop]
        x = self.x0 + self.direction * s
        f = self(x)
        if self.direction < 0:
            x, f = x[::-1], f[::-1]
        return x, f

    @cached_property
    def max_residual(self):
        """Largest ``|a f' + H(f, x) - lam|`` of the dense output over the span."""
        if self.n_steps == 0:
            return 0.0
        sig = (np.arange(RESIDUAL_POINTS) + 0.5) / RESIDUAL_POINTS
        s = (self.s_nodes[:-1, None] + np.diff(self.s_nodes)[:, None] * sig).ravel()
        s = np.concatenate([s, self.s_nodes[:-1]])
        s = s[s <= self.s_stop]
        x = self.x0 + self.direction * s
        f = self(x)
        fp = self.derivative(x)
        res = self.env.a_eval(x) * fp + self.env.h_eval(f, x) - self.lam
        return float(np.abs(res).max())

    def to_rows(self, per_step=1):
        x, f = self.sample(per_step)
        return np.column_stack([x, f])


def default_escape_radius(env, lam):
    """``radius_bound(lam) + 1``, clamped to the ground level for levels below ``gl(0)``."""
    envl = env.envelopes_for_level(lam)
    level = max(lam, float(envl.gl_values[envl.p_grid.size // 2]))
    return radius_bound(envl, level) + 1.0


def _scale(env):
    return env.period if env.period is not None else 1.0


def _run_kernel(env, lam, x0, f0, length, direction, tol, esc):
    scale = _scale(env)
    status, s, y, q, s_event = kernels.dp5_integrate(
        env.model, float(lam), float(x0), float(f0), float(length), float(direction),
        float(tol), float(tol), float(esc), 1e-13 * max(1.0, length), 0.5 * scale,
        MAX_STEPS)
    if status == kernels.STATUS_STEP_UNDERFLOW:
        raise StepUnderflow(
            f"step size collapsed at x={x0 + direction * s[-1]:.9g} (lam={lam:.9g})")
    if status == kernels.STATUS_MAX_STEPS:
        raise StepUnderflow(f"step budget exhausted at x={x0 + direction * s[-1]:.9g}")
    return TERMINAL[status], s, y, q, s_event


def displacements(env, lam, p0s, x0, x1, tol, escape_radius):
    """``f(x1; f(x0) = p0) - p0`` for each start, with signed infinite escape markers."""
    direction = 1.0 if x1 >= x0 else -1.0
    length = abs(x1 - x0)
    p0s = np.ascontiguousarray(np.atleast_1d(p0s), dtype=float)
    out = kernels.displacement_scan(
        env.model, float(lam), p0s, float(x0), float(length), direction, float(tol), float(tol),
        float(escape_radius), 1e-13 * max(1.0, length), 0.5 * _scale(env), MAX_STEPS)
    if np.any(np.isnan(out)):
        i = int(np.nonzero(np.isnan(out))[0][0])
        raise StepUnderflow(f"integration from p0={p0s[i]:.9g} failed (lam={lam:.9g})")
    return out


def _integrate(env, lam, x0, f0, x1, tol, escape_radius=None):
    direction = 1.0 if x1 >= x0 else -1.0
    esc = default_escape_radius(env, lam) if escape_radius is None else float(escape_radius)
    terminal, s, y, q, s_event = _run_kernel(env, lam, x0, f0, abs(x1 - x0), direction, tol, esc)
    return OdeSolution(env, lam, x0, direction, s, y, q, terminal, s_event)


def integrate_auxiliary(env, lam, x0, f0, x1, tol=1e-9, escape_radius=None):
    """Integrate ``a f' + H(f, x) = lam`` from ``(x0, f0)`` up to ``x1 > x0``.

    Stops early with ``terminal`` set to ``escaped_above``/``escaped_below`` when
    ``|f|`` crosses ``escape_radius`` (default ``radius_bound(lam) + 1``).
    """
    if not x1 > x0:
        raise ValueError("integrate_auxiliary requires x1 > x0")
    return _integrate(env, lam, x0, f0, x1, tol, escape_radius)


def integrate_backward(env, lam, x0, f0, x1, tol=1e-9, escape_radius=None):
    """Same as :func:`integrate_auxiliary` but from ``x0`` down to ``x1 < x0``."""
    if not x1 < x0:
        raise ValueError("integrate_backward requires x1 < x0")
    return _integrate(env, lam, x0, f0, x1, tol, escape_radius)


# ---------------------------------------------------------------------------
# curves and strip shooting
# ---------------------------------------------------------------------------

class ConstantCurve:
    """``f(x) = value``; ``lam`` is its level when it solves the ODE exactly."""

    def __init__(self, value, lam=None):
        self.value = float(value)
        self.lam = lam

    def __call__(self, x):
        return np.full(np.shape(x), self.value) if np.ndim(x) else self.value

    def derivative(self, x):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0


class _FunctionCurve:
    def __init__(self, func, h=1e-6):
        self.func = func
        self.h = h
        self.lam = getattr(func, "lam", None)

    def __call__(self, x):
        return np.asarray(self.func(x), dtype=float) if np.ndim(x) else float(self.func(x))

    def derivative(self, x):
        h = self.h
        return (np.asarray(self.func(np.asarray(x) + h)) - np.asarray(self.func(np.asarray(x) - h))) / (2 * h)


def as_curve(obj):
    if isinstance(obj, (int, float, np.floating)):
        return ConstantCurve(obj)
    if callable(obj) and hasattr(obj, "derivative"):
        return obj
    if callable(obj):
        return _FunctionCurve(obj)
    raise TypeError(f"cannot use {type(obj).__name__} as a curve")


def curve_level(env, curve, x):
    """``a f' + H(f, x)`` along a curve; equals its level for exact solutions."""
    x = np.asarray(x, dtype=float)
    return env.a_eval(x) * curve.derivative(x) + env.h_eval(curve(x), x)


@dataclass
class ShootOutcome:
    exit_x: float | None
    exit_side: str
    solution: OdeSolution

    def __post_init__(self):
        if (self.exit_side == "survived") != (self.exit_x is None):
            raise ValueError("exit_x must be None exactly when the strip was not exited")

    def to_json(self):
        return json.dumps({"exit_x": self.exit_x, "exit_side": self.exit_side,
                           "lambda": self.solution.lam, "x_start": self.solution.x_start,
                           "terminal": self.solution.terminal})


def _concat(env, lam, x0, direction, pieces, terminal, s_stop):
    s_all, y_all, q_all = [pieces[0][0]], [pieces[0][1]], [pieces[0][2]]
    for s, y, q in pieces[1:]:
        s_all.append(s[1:])
        y_all.append(y[1:])
        q_all.append(q)
    return OdeSolution(env, lam, x0, direction, np.concatenate(s_all), np.concatenate(y_all),
                       np.concatenate(q_all) if q_all else np.zeros((0, 4)), terminal, s_stop)


def _start_code(env, lam, x, f_c, curve):
    """Side the trajectory leaves a curve it starts on: +1 up, -1 down, 0 not on it."""
    val = float(curve(x))
    if abs(f_c - val) > 1e-12 * max(1.0, abs(val)):
        return 0
    lev = curve.lam if getattr(curve, "lam", None) is not None else \
        float(np.ravel(curve_level(env, curve, x))[0])
    d = lam - lev
    return 1 if d > 0 else (-1 if d < 0 else 0)


def shoot(env, lam, c, f_c, lower, upper, x_max, tol=1e-9, direction=1, escape_radius=None):
    """Integrate from ``(c, f_c)`` until the trajectory leaves the strip ``lower < f < upper``.

    The exit point is located by bracketing the first sign change of the
    distance to each curve on the dense output and refining with Brent's method.
    With ``direction=-1`` the integration runs toward ``x_max < c``.
    """
    lower, upper = as_curve(lower), as_curve(upper)
    direction = 1.0 if direction > 0 else -1.0
    length = direction * (x_max - c)
    if length <= 0:
        raise ValueError("x_max must lie beyond c in the integration direction")
    lo_c, up_c = float(lower(c)), float(upper(c))
    if not lo_c <= f_c <= up_c:
        raise ValueError(f"start value {f_c} is outside the strip [{lo_c}, {up_c}]")
    esc = default_escape_radius(env, lam) if escape_radius is None else float(escape_radius)
    esc = max(esc, abs(lo_c) + 1.0, abs(up_c) + 1.0)

    # starting on a curve: direction of departure decides an immediate exit
    start_lo = direction * _start_code(env, lam, c, f_c, lower)
    start_up = direction * _start_code(env, lam, c, f_c, upper)
    if start_lo < 0:
        sol = OdeSolution(env, lam, c, direction, [0.0], [f_c], np.zeros((0, 4)), "reached_end", 0.0)
        return ShootOutcome(float(c), "hit_lower", sol)
    if start_up > 0:
        sol = OdeSolution(env, lam, c, direction, [0.0], [f_c], np.zeros((0, 4)), "reached_end", 0.0)
        return ShootOutcome(float(c), "hit_upper", sol)

    chunk = _scale(env)
    pieces = []
    s_done = 0.0
    y0 = f_c
    terminal = "reached_end"
    exit_x = None
    exit_side = "survived"
    while s_done < length - 1e-15 * max(1.0, length):
        span = min(chunk, length - s_done)
        xs = c + direction * s_done
        term, s, y, q, s_event = _run_kernel(env, lam, xs, y0, span, direction, tol, esc)
        s_glob = s + s_done
        pieces.append((s_glob, y, q))
        part = OdeSolution(env, lam, c, direction, s_glob, y, q, term, s_done + s_event)
        hit = _first_exit(part, lower, upper, skip_start=(len(pieces) == 1))
        if hit is not None:
            exit_x, exit_side = hit
            terminal = term
            s_stop = direction * (exit_x - c)
            break
        if term != "reached_end":
            # escaped without a detected crossing: the crossing lies inside the last step
            terminal = term
            exit_side = "hit_upper" if term == "escaped_above" else "hit_lower"
            exit_x = part.x_stop
            s_stop = s_done + s_event
            break
        s_done = s_glob[-1]
        y0 = y[-1]
    else:
        s_stop = length
    sol = _concat(env, lam, c, direction, pieces, terminal, s_stop)
    return ShootOutcome(exit_x, exit_side, sol)


def _first_exit(part, lower, upper, skip_start, per_step=4):
    x, f = part.sample(per_step)
    if part.direction < 0:
        x, f = x[::-1], f[::-1]
    if x.size < 2:
        return None
    g_lo = f - lower(x)
    g_up = upper(x) - f
    best = None
    for g, side, curve in ((g_lo, "hit_lower", lower), (g_up, "hit_upper", upper)):
        start = 1 if skip_start else 0
        neg = np.nonzero(g[start:] < 0)[0]
        if neg.size == 0:
            continue
        j = int(neg[0]) + start
        if j == 0:
            cand = float(x[0])
        else:
            sign = 1.0 if side == "hit_lower" else -1.0

            def dist(t, curve=curve, sign=sign):
                return sign * (float(part(t)) - float(curve(t)))

            a, b = float(x[j - 1]), float(x[j])
            if dist(a) <= 0:
                cand = a
            else:
                cand = brentq(dist, a, b, xtol=1e-14 * max(1.0, abs(a)), rtol=1e-15)
        key = part.direction * (cand - part.x0)
        if best is None or key < best[0]:
            best = (key, cand, side)
    if best is None:
        return None
    return best[1], best[2]


# ---------------------------------------------------------------------------
# trapped solutions
# ---------------------------------------------------------------------------

_CODE = {"hit_lower": -1, "survived": 0, "hit_upper": 1}


def sandwich_solve(env, lam, f1, f2, x_span, tol=1e-9, n_check=256, max_iter=200):
    """A solution on ``x_span`` trapped between ``f1 < f2``.

    Exit side under forward shooting is monotone in the initial value, so the
    initial value is bisected between the two exit regimes.  When the strip is
    forward invariant the same bisection runs backward from the right end.
    """
    f1, f2 = as_curve(f1), as_curve(f2)
    x0, x1 = map(float, x_span)
    if not x1 > x0:
        raise ValueError("x_span must be increasing")
    xs = np.linspace(x0, x1, n_check)
    gap = f2(xs) - f1(xs)
    if np.any(gap <= 0):
        i = int(np.argmin(gap))
        raise NotOrdered(f"f1 >= f2 at x={xs[i]:.6g} (f2 - f1 = {gap[i]:.3g})")
    s1 = np.sign(curve_level(env, f1, xs) - lam)
    s2 = np.sign(curve_level(env, f2, xs) - lam)
    for name, s in (("f1", s1), ("f2", s2)):
        if np.any(s == 0) or np.any(s != s[0]):
            i = int(np.nonzero((s == 0) | (s != s[0]))[0][0])
            raise WrongSigns(f"a {name}' + H({name}) - lam changes sign or vanishes near x={xs[i]:.6g}")
    esc = max(default_escape_radius(env, lam),
              float(np.abs(f1(xs)).max()) + 1.0, float(np.abs(f2(xs)).max()) + 1.0)

    if s1[0] < 0 and s2[0] > 0:
        # forward invariant strip: bisect from the right end going left
        start, end, direction = x1, x0, -1
    else:
        start, end, direction = x0, x1, 1

    def run(v):
        return shoot(env, lam, start, v, f1, f2, end, tol, direction=direction, escape_radius=esc)

    lo_v, hi_v = float(f1(start)), float(f2(start))
    out_lo, out_hi = run(lo_v), run(hi_v)
    # in backward time the roles of the exit sides are mirrored but the order is kept
    if _CODE[out_lo.exit_side] == _CODE[out_hi.exit_side] != 0:
        raise WrongSigns(f"every initial value exits through {out_lo.exit_side}; nothing is trapped")
    best = None
    for v, out in ((lo_v, out_lo), (hi_v, out_hi)):
        if out.exit_side == "survived":
            best = out
    for _ in range(max_iter):
        if hi_v - lo_v <= 1e-15 * max(1.0, abs(lo_v)):
            break
        mid = 0.5 * (lo_v + hi_v)
        out = run(mid)
        code = _CODE[out.exit_side]
        if code == 0:
            best = out
            # shrink toward the exiting side so the survivor approaches the boundary
            if _CODE[out_lo.exit_side] != 0:
                hi_v, out_hi = mid, out
            elif _CODE[out_hi.exit_side] != 0:
                lo_v, out_lo = mid, out
            else:
                break
        elif code < 0:
            lo_v, out_lo = mid, out
        else:
            hi_v, out_hi = mid, out
        if best is not None and hi_v - lo_v <= tol:
            break
    if best is None:
        raise WrongSigns("bisection failed to find a trapped solution")
    sol = best.solution
    if sol.direction < 0:
        return _integrate(env, lam, x0, float(sol(x0)), x1, tol, esc)
    return sol
