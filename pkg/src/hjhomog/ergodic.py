"""Birkhoff-average estimates of ``theta(lam)`` in random media by pullback attraction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .effective import GAP_FACTOR, Gap, effective_from_samples
from .env import Environment, RandomEnvironment, radius_bound
from .errors import NonCoalescent, NoTrapping
from .ode import integrate_auxiliary, integrate_backward

CI_LEVEL = 0.95
SAMPLES_PER_UNIT = 16


@dataclass
class ErgodicEstimate:
    lam: float
    theta_hat: float
    window: float
    burn_in: float
    per_seed_means: np.ndarray
    ci_halfwidth: float
    direction: int = 1
    seeds: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def lambda_(self):
        return self.lam

    @property
    def seed_count(self):
        return int(self.per_seed_means.size)

    def row(self):
        return (self.lam, self.theta_hat, self.ci_halfwidth, self.seed_count, self.window)


def realise(env_family, seed, x_lo, x_hi):
    """The environment for ``seed`` covering ``[x_lo, x_hi]``.

    Random families are regenerated on a window covering the integration span;
    any other environment is returned unchanged (deterministic media).
    """
    if isinstance(env_family, RandomEnvironment):
        return RandomEnvironment(seed, env_family.generator_kind, env_family.params,
                                 (x_lo - 1.0, x_hi + 1.0), env_family.poly)
    if callable(env_family) and not isinstance(env_family, Environment):
        return env_family(seed)
    return env_family


ENVELOPE_DP = 1e-3


def trapping_pair(env, lam, x_samples=2048):
    """``(p1, p2)`` with ``sup_x H(p1, x) < lam < gl(p2)``; raises NoTrapping otherwise."""
    xs = env.sample_points(x_samples)
    envl = env.envelopes_for_level(lam, dp=ENVELOPE_DP)
    ground = float(envl.gl_values[envl.p_grid.size // 2])
    if lam <= ground:
        raise NoTrapping(f"level {lam:.6g} is not above gl(0) = {ground:.6g}")
    R = radius_bound(envl, lam)
    ps = np.linspace(-R, R, 401)
    top = env.h_eval(ps[:, None], xs[None, :]).max(axis=1)
    k = int(np.argmin(top))
    if not top[k] < lam:
        raise NoTrapping(f"no constant subsolution at level {lam:.6g}: "
                         f"min_p sup_x H = {top[k]:.6g}")
    p2 = R + 0.5
    if not float(envl.lower(p2)) > lam:
        raise NoTrapping(f"gl({p2:.4g}) does not exceed {lam:.6g}")
    return float(ps[k]), float(p2)


def _clusters(samples, tol):
    """Group trajectories whose sup distance is <= tol; check the groups separate cleanly."""
    groups = []
    for i, f in enumerate(samples):
        for g in groups:
            if float(np.abs(f - samples[g[0]]).max()) <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def _seed_regimes(env, lam, window, burn_in, p2, n_initial, tol, coalesce_tol, sep_tol):
    """Regimes for one realisation: forward pullbacks from ``-burn_in`` and backward
    pullbacks from ``window + burn_in``, clustered by coalescence."""
    starts = np.linspace(-p2, p2, n_initial + 2)[1:-1]
    xs = np.linspace(0.0, window, int(window * SAMPLES_PER_UNIT) + 1)
    esc = p2 + 1.0
    R = p2 - 0.5
    regimes = []
    diag = {"escaped": 0, "radius_excess": 0.0}
    for direction in (1, -1):
        sols, samples = [], []
        for p0 in starts:
            if direction > 0:
                sol = integrate_auxiliary(env, lam, -burn_in, p0, window, tol, esc)
            else:
                sol = integrate_backward(env, lam, window + burn_in, p0, 0.0, tol, esc)
            if not sol.survived:
                diag["escaped"] += 1
                continue
            f = sol(xs)
            diag["radius_excess"] = max(diag["radius_excess"], float(np.abs(f).max()) - R)
            sols.append(sol)
            samples.append(f)
        groups = _clusters(samples, coalesce_tol)
        for g in groups:
            rep = samples[g[0]]
            for o in (samples[h[0]] for h in groups if h is not g):
                if float(np.abs(o - rep).min()) < sep_tol:
                    raise NonCoalescent(
                        f"trajectories at level {lam:.6g} neither coalesce nor separate",
                        {"direction": direction, "min_distance": float(np.abs(o - rep).min()),
                         "sup_distance": float(np.abs(o - rep).max())})
            sol = sols[g[0]]
            mean = sol.integral(0.0, window) / window
            half = 0.5 * window
            halves = (sol.integral(0.0, half) / half, sol.integral(half, window) / half)
            regimes.append({"mean": mean, "direction": direction, "members": len(g),
                            "halves": halves})
    # a neutral solution may show up in both directions: merge by mean
    regimes.sort(key=lambda r: r["mean"])
    merged = []
    for r in regimes:
        if merged and abs(r["mean"] - merged[-1]["mean"]) <= max(sep_tol, 10 * coalesce_tol):
            continue
        merged.append(r)
    return merged, diag


def _ci(values):
    n = values.size
    if n < 2:
        return math.inf
    sd = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.5 + CI_LEVEL / 2, n - 1) * sd / math.sqrt(n))


def estimate_theta_random(env_family, lam, seeds, window, burn_in, tol=1e-10, n_initial=8,
                          coalesce_tol=None, sep_tol=1e-3):
    """One :class:`ErgodicEstimate` per solution regime found at level ``lam``."""
    if not window >= 10.0 * burn_in:
        raise ValueError("window must be at least 10 * burn_in")
    if burn_in <= 0:
        raise ValueError("burn_in must be positive")
    seeds = list(seeds)
    # global error grows with the window, so coalescence is judged well above tol
    coalesce_tol = max(1e4 * tol, 1e-7) if coalesce_tol is None else coalesce_tol
    per_seed = []
    diags = []
    for seed in seeds:
        env = realise(env_family, seed, -burn_in, window + burn_in)
        _, p2 = trapping_pair(env, lam)
        regimes, diag = _seed_regimes(env, lam, window, burn_in, p2, n_initial, tol,
                                      coalesce_tol, sep_tol)
        per_seed.append(regimes)
        diags.append(diag)
    counts = {len(r) for r in per_seed}
    if len(counts) != 1 or 0 in counts:
        raise NonCoalescent(f"regime counts differ across seeds at level {lam:.6g}",
                            {"counts": [len(r) for r in per_seed]})
    out = []
    for j in range(counts.pop()):
        means = np.array([r[j]["mean"] for r in per_seed])
        halves = np.array([r[j]["halves"] for r in per_seed])
        out.append(ErgodicEstimate(
            lam=float(lam), theta_hat=float(means.mean()), window=float(window),
            burn_in=float(burn_in), per_seed_means=means, ci_halfwidth=_ci(means),
            direction=per_seed[0][j]["direction"], seeds=seeds,
            diagnostics={"half_window_rms": float(np.sqrt(np.mean((halves[:, 0] - halves[:, 1]) ** 2))),
                         "escaped": sum(d["escaped"] for d in diags),
                         "radius_excess": max(d["radius_excess"] for d in diags)}))
    return out


def effective_from_random(env_family, lambda_grid, seeds, window, burn_in, tol=1e-10,
                          gap_factor=GAP_FACTOR, ci_factor=3.0, n_initial=8):
    """Empirical ``H-bar`` from pooled ergodic estimates.

    Positive-``theta`` and negative-``theta`` regimes form separate increasing and
    decreasing chains; the interval between them (levels without trapping) is
    recorded as unresolved rather than declared a gap.
    """
    estimates = []
    for lam in lambda_grid:
        estimates.extend(estimate_theta_random(env_family, lam, seeds, window, burn_in, tol,
                                               n_initial))
    pts = sorted(((e.theta_hat, e.lam, e.ci_halfwidth) for e in estimates))
    th = np.array([p[0] for p in pts])
    lam = np.array([p[1] for p in pts])
    ci = np.array([p[2] for p in pts])
    gaps = []
    unresolved = None
    neg = np.nonzero(th < 0)[0]
    pos = np.nonzero(th >= 0)[0]
    if neg.size and pos.size:
        unresolved = (float(th[neg[-1]]), float(th[pos[0]]))
    steps = np.diff(th)
    for i in range(steps.size):
        if unresolved is not None and th[i] == unresolved[0]:
            continue
        near = [steps[j] for j in (i - 1, i + 1) if 0 <= j < steps.size]
        spacing = max(near) if near else 0.0
        combined = ci[i] + ci[i + 1]
        if steps[i] > gap_factor * spacing and steps[i] > ci_factor * combined:
            lam_bar = 0.5 * (lam[i] + lam[i + 1])
            gaps.append(Gap(float(th[i]), float(th[i + 1]), float(lam_bar),
                            float(abs(lam[i] - lam[i + 1])), float(lam[i]), float(lam[i + 1])))
    samples = list(zip(th.tolist(), lam.tolist()))
    first = realise(env_family, seeds[0], -burn_in, window + burn_in)
    envl = first.envelopes_for_level(float(np.max(lambda_grid)), dp=ENVELOPE_DP)
    meta = {"ci": ci.tolist(), "window": window, "burn_in": burn_in, "seeds": list(seeds),
            "unresolved_interval": unresolved, "estimates": [e.row() for e in estimates]}
    return effective_from_samples(samples, envl, gaps, empirical=True, metadata=meta)
