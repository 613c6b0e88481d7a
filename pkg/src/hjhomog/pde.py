"""Explicit monotone solver for ``u_t = eps a(x/eps) u_xx + H(u_x, x/eps)`` and H-bar estimates.

Lax-Friedrichs numerical Hamiltonian with centred diffusion.  The dissipation
``alpha`` is tied to the gradient box the run currently lives in; when the
discrete gradient leaves the box, the box grows, ``alpha`` and ``dt`` are
recomputed and stepping resumes (the kernel never applies a step taken
outside the box).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .effective import query
from .env import radius_bound
from .errors import CflViolation, GradientBlowup, OutOfRange

TILTED = "tilted_periodic"
WIDE = "wide_domain"
CFL_SAFETY = 0.45


@dataclass
class Grid1D:
    x_lo: float
    x_hi: float
    nx: int
    t_final: float
    dt: float | None = None        # None: chosen from the CFL bound
    cfl_safety: float = CFL_SAFETY

    def __post_init__(self):
        if self.nx < 3 or not self.x_hi > self.x_lo:
            raise ValueError("grid needs nx >= 3 and x_hi > x_lo")
        if self.t_final < 0:
            raise ValueError("t_final must be nonnegative")

    @property
    def dx(self):
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def x(self):
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    def to_dict(self):
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "nx": self.nx, "dx": self.dx,
                "t_final": self.t_final, "dt": self.dt, "cfl_safety": self.cfl_safety}


@dataclass(eq=False)
class PdeRun:
    theta: object
    epsilon: float
    grid: Grid1D
    x: np.ndarray
    u_final: np.ndarray
    probe_history: list
    boundary_mode: str
    max_gradient: float
    gradient_range: tuple
    certificates: list = field(default_factory=list)
    steps: int = 0

    @property
    def monotone(self):
        return all(c["monotone"] for c in self.certificates)

    def probe_rows(self):
        return [(t, u, u / t if t > 0 else float("nan")) for t, u in self.probe_history]

    def profile_rows(self):
        return list(zip(self.x.tolist(), self.u_final.tolist()))

    def manifest(self):
        return {"epsilon": self.epsilon, "theta": self.theta if np.isscalar(self.theta) else None,
                "grid": self.grid.to_dict(), "boundary_mode": self.boundary_mode,
                "max_gradient": self.max_gradient, "gradient_range": list(self.gradient_range),
                "steps": self.steps, "certificates": self.certificates}


def _lipschitz_box(env, p_lo, p_hi, xs, n_p=201):
    p = np.linspace(p_lo, p_hi, n_p)
    sub = xs if xs.size <= 256 else xs[:: max(1, xs.size // 256)]
    return float(np.abs(env.dh_dp_eval(p[:, None], sub[None, :])).max())


def gradient_cap(env, slope_bound):
    """``2 (R + 1)`` with ``R`` the radius bound at ``gu(slope_bound)``."""
    envl = env.envelopes_for_level(0.0)
    level = float(envl.gu(abs(slope_bound)))
    envl = env.envelopes_for_level(level)
    ground = float(envl.gl_values[envl.p_grid.size // 2])
    return 2.0 * (radius_bound(envl, max(level, ground)) + 1.0)


class _Stepper:
    """Shared stepping state: coefficients, dissipation and time step."""

    def __init__(self, env, eps, x_nodes, mode, theta, p_left, p_right, cap, dx, cfl_safety,
                 dt_fixed=None):
        self.env = env
        self.eps = float(eps)
        self.mode = mode
        self.theta = float(theta)
        self.p_left, self.p_right = float(p_left), float(p_right)
        self.cap = float(cap)
        self.dx = float(dx)
        self.safety = float(cfl_safety)
        self.dt_fixed = dt_fixed
        y = x_nodes / self.eps
        model = env.model
        self.a_i = np.ascontiguousarray(env.a_eval(y), dtype=float)
        self.b_i = np.ascontiguousarray(env.shift(y) * np.ones_like(y), dtype=float)
        self.v_i = np.ascontiguousarray(env.potential(y) * np.ones_like(y), dtype=float)
        self.poly = np.ascontiguousarray(model[-1], dtype=float)
        self.xs = y
        self.certificates = []
        self.box = None

    def calibrate(self, g_lo, g_hi):
        if max(abs(g_lo), abs(g_hi)) > self.cap:
            raise GradientBlowup(f"discrete gradient range [{g_lo:.4g}, {g_hi:.4g}] exceeds "
                                 f"the cap {self.cap:.4g}")
        width = max(0.5, 0.25 * (g_hi - g_lo))
        lo, hi = max(g_lo - width, -self.cap), min(g_hi + width, self.cap)
        if self.box is not None:
            lo, hi = min(lo, self.box[0]), max(hi, self.box[1])
        self.box = (lo, hi)
        K = _lipschitz_box(self.env, lo, hi, self.xs)
        self.alpha = max(K, 1e-12)
        a_max = float(self.eps * self.a_i.max())
        bound = self.safety * min(self.dx ** 2 / (2.0 * a_max) if a_max > 0 else math.inf,
                                  self.dx / (2.0 * self.alpha))
        dt = bound if self.dt_fixed is None else float(self.dt_fixed)
        if dt > bound * (1 + 1e-12):
            raise CflViolation(f"dt={dt:.4g} exceeds the CFL bound {bound:.4g}")
        self.dt = dt
        centre = 1.0 - dt * (2.0 * a_max / self.dx ** 2 + self.alpha / self.dx)
        self.certificates.append({"box": [lo, hi], "alpha": self.alpha, "lipschitz": K,
                                  "dt": dt, "cfl_bound": bound, "centre_weight": centre,
                                  "monotone": centre >= 0.0})

    def run(self, u, nsteps, dt=None):
        dt = self.dt if dt is None else dt
        return kernels.hj_steps(u, int(nsteps), dt, self.dx, self.eps, self.theta, self.a_i,
                                self.b_i, self.v_i, self.poly, self.alpha,
                                kernels.MODE_TILTED if self.mode == TILTED else kernels.MODE_WIDE,
                                self.p_left, self.p_right, self.box[0], self.box[1])

    def advance(self, u, t, t_target, track):
        """Step ``u`` from ``t`` to exactly ``t_target``; returns (t, steps)."""
        steps = 0
        while t < t_target - 1e-14 * max(1.0, t_target):
            remaining = t_target - t
            n_full = int(math.floor(remaining / self.dt * (1 + 1e-12)))
            if n_full > 0:
                done, smin, smax = self.run(u, n_full)
                if done > 0:
                    t += done * self.dt
                    steps += done
                    track(smin, smax)
                if done < n_full:
                    self._grow(u)
                    continue
                remaining = t_target - t
            if remaining > 1e-14 * max(1.0, t_target):
                done, smin, smax = self.run(u, 1, remaining)
                if done == 0:
                    self._grow(u)
                    continue
                steps += 1
                track(smin, smax)
            t = t_target
        return t, steps

    def _grow(self, u):
        lo, hi = self.slopes(u)
        self.calibrate(min(lo, self.box[0]), max(hi, self.box[1]))

    def slopes(self, u):
        if self.mode == TILTED:
            d = self.theta + np.diff(u, append=u[0]) / self.dx
        else:
            d = np.concatenate([[self.p_left, self.p_right], np.diff(u) / self.dx])
        return float(d.min()), float(d.max())


def _initial(grid, init, mode):
    """Nodes and initial state; tilted mode stores ``u - theta x`` on one cell."""
    x = grid.x
    if mode == TILTED:
        if not np.isscalar(init):
            raise ValueError("tilted_periodic mode needs linear data (a scalar theta)")
        return x[:-1], np.zeros(x.size - 1), float(init), 0.0, 0.0
    if np.isscalar(init):
        th = float(init)
        return x, th * x, th, th, th
    g = np.asarray(init(x) if callable(init) else init, dtype=float)
    if g.shape != x.shape:
        raise ValueError("sampled initial data must match the grid")
    pl = (g[1] - g[0]) / grid.dx
    pr = (g[-1] - g[-2]) / grid.dx
    return x, g.copy(), 0.0, pl, pr


def _probe_value(x, u, mode, theta, x_probe=0.0):
    if mode == TILTED:
        period = x[-1] - x[0] + (x[1] - x[0])
        xx = np.append(x, x[0] + period)
        uu = np.append(u, u[0])
        xp = x[0] + (x_probe - x[0]) % period
        return float(np.interp(xp, xx, uu) + theta * x_probe)
    return float(np.interp(x_probe, x, u))


def solve_viscous_hj(env, epsilon, init, grid, boundary_mode=None, probe_times=None,
                     n_probes=100, slope_cap=None, callback=None):
    """Evolve ``u_t = eps a(x/eps) u_xx + H(u_x, x/eps)`` on ``grid`` from ``init``.

    ``init`` is a slope ``theta`` (linear data) or sampled/callable data ``g``.
    Tilted-periodic mode needs a periodic environment whose scaled period
    ``eps L`` equals the grid length.  ``callback(t, x, u)`` runs after each probe.
    """
    if boundary_mode is None:
        boundary_mode = TILTED if (env.period is not None and np.isscalar(init)) else WIDE
    if boundary_mode == TILTED:
        if env.period is None:
            raise ValueError("tilted_periodic mode needs a periodic environment")
        cell = epsilon * env.period
        if abs((grid.x_hi - grid.x_lo) - cell) > 1e-9 * max(1.0, cell):
            raise ValueError(f"tilted grid must span one scaled period ({cell:.6g})")
    x, u, theta, pl, pr = _initial(grid, init, boundary_mode)
    slopes0 = (theta + np.diff(u, append=u[0]) / grid.dx if boundary_mode == TILTED
               else np.concatenate([[pl, pr], np.diff(u) / grid.dx]))
    g_lo, g_hi = float(slopes0.min()), float(slopes0.max())
    cap = gradient_cap(env, max(abs(g_lo), abs(g_hi))) if slope_cap is None else slope_cap
    st = _Stepper(env, epsilon, x, boundary_mode, theta, pl, pr, cap, grid.dx, grid.cfl_safety,
                  grid.dt)
    st.calibrate(g_lo, g_hi)
    if probe_times is None:
        probe_times = np.linspace(0.0, grid.t_final, n_probes + 1)[1:]
    probe_times = sorted(float(t) for t in probe_times if 0 < t <= grid.t_final)
    if not probe_times or probe_times[-1] < grid.t_final:
        probe_times.append(float(grid.t_final))
    rng = [g_lo, g_hi]

    def track(smin, smax):
        if max(abs(smin), abs(smax)) > cap:
            raise GradientBlowup(f"discrete gradient reached {max(abs(smin), abs(smax)):.4g} "
                                 f"beyond the cap {cap:.4g}")
        rng[0], rng[1] = min(rng[0], smin), max(rng[1], smax)

    history = [(0.0, _probe_value(x, u, boundary_mode, theta))]
    t, steps = 0.0, 0
    for tp in probe_times:
        t, n = st.advance(u, t, tp, track)
        steps += n
        history.append((t, _probe_value(x, u, boundary_mode, theta)))
        if callback is not None:
            callback(t, x, u)
    if boundary_mode == TILTED:
        x_out = grid.x
        u_out = np.append(u, u[0]) + theta * x_out
    else:
        x_out, u_out = x, u
    return PdeRun(theta=init if np.isscalar(init) else None, epsilon=float(epsilon), grid=grid,
                  x=x_out, u_final=u_out, probe_history=history, boundary_mode=boundary_mode,
                  max_gradient=max(abs(rng[0]), abs(rng[1])), gradient_range=tuple(rng),
                  certificates=st.certificates, steps=steps)


def ordered_pair_trial(env, epsilon, g_lower, g_upper, grid, slope_cap=None):
    """Evolve two data sets in lockstep with identical ``alpha`` and ``dt``.

    Returns the smallest ``u_upper - u_lower`` seen over all steps (negative
    means the order was broken at some step).
    """
    x = grid.x
    u1 = np.asarray(g_lower(x) if callable(g_lower) else g_lower, dtype=float).copy()
    u2 = np.asarray(g_upper(x) if callable(g_upper) else g_upper, dtype=float).copy()
    if np.any(u2 < u1):
        raise ValueError("initial data are not ordered")
    s1, s2 = np.diff(u1) / grid.dx, np.diff(u2) / grid.dx
    # both runs share ghost slopes so the boundary treatment is identical
    pl = 0.5 * (s1[0] + s2[0])
    pr = 0.5 * (s1[-1] + s2[-1])
    lo = min(s1.min(), s2.min(), pl, pr)
    hi = max(s1.max(), s2.max(), pl, pr)
    cap = gradient_cap(env, max(abs(lo), abs(hi))) if slope_cap is None else slope_cap
    st = _Stepper(env, epsilon, x, WIDE, 0.0, pl, pr, cap, grid.dx, grid.cfl_safety, grid.dt)
    st.calibrate(lo, hi)
    n = int(math.ceil(grid.t_final / st.dt))
    worst = float((u2 - u1).min())
    for _ in range(n):
        while True:
            a, b = u1.copy(), u2.copy()
            d1, m1, M1 = st.run(a, 1)
            d2, m2, M2 = st.run(b, 1)
            if d1 == 1 and d2 == 1:
                break
            lo = min(st.slopes(u1)[0], st.slopes(u2)[0])
            hi = max(st.slopes(u1)[1], st.slopes(u2)[1])
            st.calibrate(lo, hi)
        u1, u2 = a, b
        worst = min(worst, float((u2 - u1).min()))
    return worst


# ---------------------------------------------------------------------------
# effective value from long-time runs
# ---------------------------------------------------------------------------

@dataclass
class EffectiveValueEstimate:
    theta: float
    epsilons: list
    values: list
    estimate: float
    richardson: float | None
    monotone_trend: bool | None
    run: PdeRun

    def errors_against(self, reference):
        return [abs(v - reference) for v in self.values]

    def rows(self):
        return [(e, v) for e, v in zip(self.epsilons, self.values)]


def estimate_effective_value(env, theta, epsilons, nx=200, cfl_safety=CFL_SAFETY,
                             wide_margin=4.0):
    """``eps u(1/eps, 0)`` for each ``eps`` from one scale-1 run up to ``t = 1/min(eps)``.

    The scaled solution satisfies ``u_eps(1, 0) = eps u(1/eps, 0)``, so every
    entry of ``epsilons`` is read off the same run at its own probe time.
    """
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    t_end = 1.0 / eps[-1]
    times = [1.0 / e for e in eps]
    if env.period is not None:
        grid = Grid1D(0.0, env.period, nx, t_end, cfl_safety=cfl_safety)
        run = solve_viscous_hj(env, 1.0, float(theta), grid, TILTED, probe_times=times)
    else:
        K = _lipschitz_box(env, theta - 1.0, theta + 1.0, np.linspace(-50, 50, 257))
        half = K * t_end + wide_margin * math.sqrt(t_end) + 5.0
        n = max(nx, int(2 * half * nx / 10.0))
        grid = Grid1D(-half, half, n, t_end, cfl_safety=cfl_safety)
        run = solve_viscous_hj(env, 1.0, float(theta), grid, WIDE, probe_times=times)
    lookup = dict(run.probe_history)
    values = [e * lookup[min(lookup, key=lambda s: abs(s - 1.0 / e))] for e in eps]
    rich = 2.0 * values[-1] - values[-2] if len(values) >= 2 else None
    trend = None
    if len(values) >= 3:
        d = np.diff(values)
        trend = bool(np.all(d >= 0) or np.all(d <= 0))
    return EffectiveValueEstimate(float(theta), eps, values, values[-1], rich, trend, run)


# ---------------------------------------------------------------------------
# the effective equation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EffectiveSolution:
    x: np.ndarray
    u: np.ndarray
    t: float
    alpha: float
    dt: float
    steps: int


def solve_effective(eff, init, grid):
    """Lax-Friedrichs for ``u_t = Hbar(u_x)`` with linear extrapolation at both ends."""
    x = grid.x
    if np.isscalar(init):
        g = float(init) * x
    else:
        g = np.asarray(init(x) if callable(init) else init, dtype=float)
    u = g.copy()
    slopes = np.diff(u) / grid.dx
    lo, hi = eff.theta_range
    if slopes.min() < lo - 1e-12 or slopes.max() > hi + 1e-12:
        raise OutOfRange(f"initial slopes [{slopes.min():.4g}, {slopes.max():.4g}] leave the "
                         f"tabulated range [{lo:.4g}, {hi:.4g}]")
    pl, pr = float(slopes[0]), float(slopes[-1])
    th, lam = eff.theta, eff.lam
    inside = (th >= slopes.min() - 1e-12) & (th <= slopes.max() + 1e-12)
    sel = np.nonzero(inside)[0]
    i0, i1 = max(sel.min() - 1, 0) if sel.size else 0, min(sel.max() + 1, th.size - 1) if sel.size else th.size - 1
    seg = np.abs(np.diff(lam[i0:i1 + 1]) / np.diff(th[i0:i1 + 1])) if i1 > i0 else np.array([0.0])
    alpha = max(float(seg.max()), 1e-12)
    dt = grid.cfl_safety * grid.dx / alpha if grid.dt is None else grid.dt
    if dt * alpha / grid.dx > 1.0:
        raise CflViolation(f"dt={dt:.4g} violates the transport CFL bound")
    t, steps = 0.0, 0
    while t < grid.t_final - 1e-14:
        h = min(dt, grid.t_final - t)
        d = np.diff(u) / grid.dx
        pp = np.append(d, pr)
        pm = np.insert(d, 0, pl)
        u = u + h * (query(eff, 0.5 * (pp + pm)) + 0.5 * alpha * (pp - pm))
        t += h
        steps += 1
    return EffectiveSolution(x, u, t, alpha, dt, steps)
