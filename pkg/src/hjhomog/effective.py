"""The set E, the map theta -> lam(theta), gap detection and the plateau-filled H-bar."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cell
from .env import lipschitz_constant, radius_bound
from .errors import BelowGround, NoGap, OutOfRange, SweepTooCoarse

GAP_FACTOR = 5.0


@dataclass
class Sample:
    theta: float
    lam: float
    p0: float
    branch: object = None


@dataclass
class Gap:
    theta_L: float
    theta_R: float
    lambda_bar: float
    endpoint_mismatch: float
    lambda_L: float
    lambda_R: float
    p0_L: float = float("nan")
    p0_R: float = float("nan")

    def to_dict(self):
        return {"theta_L": self.theta_L, "theta_R": self.theta_R, "lambda_bar": self.lambda_bar,
                "endpoint_mismatch": self.endpoint_mismatch}


@dataclass(eq=False)
class EffectiveHamiltonian:
    e_samples: np.ndarray           # (n, 2) rows (theta, lambda), strictly increasing theta
    gaps: list
    envelopes: object
    lipschitz_estimates: dict = field(default_factory=dict)
    p0: np.ndarray | None = None
    empirical: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def theta(self):
        return self.e_samples[:, 0]

    @property
    def lam(self):
        return self.e_samples[:, 1]

    @property
    def theta_range(self):
        return float(self.theta[0]), float(self.theta[-1])

    def gap(self, index):
        if not self.gaps:
            raise NoGap("no gaps were detected; E covers the sampled range")
        if not 0 <= index < len(self.gaps):
            raise NoGap(f"gap index {index} out of range (0..{len(self.gaps) - 1})")
        return self.gaps[index]

    def __call__(self, theta):
        return query(self, theta)

    def region(self, theta):
        for j, g in enumerate(self.gaps):
            if g.theta_L < theta < g.theta_R:
                return f"gap_{j}"
        return "E"

    def rows(self):
        """``theta, hbar, region`` rows including plateau end points."""
        out = [(t, l, self.region(t)) for t, l in self.e_samples.tolist()]
        for j, g in enumerate(self.gaps):
            mid = 0.5 * (g.theta_L + g.theta_R)
            out.append((mid, g.lambda_bar, f"gap_{j}"))
        out.sort(key=lambda r: r[0])
        return out

    def gaps_json(self):
        return json.dumps([g.to_dict() for g in self.gaps], indent=2)


def query(eff, theta):
    """Piecewise-linear in E, constant ``lambda_bar`` on each gap."""
    th = np.asarray(theta, dtype=float)
    lo, hi = eff.theta_range
    if np.any(th < lo) or np.any(th > hi):
        raise OutOfRange(f"theta outside the sampled range [{lo:.6g}, {hi:.6g}]")
    out = np.interp(th, eff.theta, eff.lam)
    for g in eff.gaps:
        inside = (th > g.theta_L) & (th < g.theta_R)
        out = np.where(inside, g.lambda_bar, out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_one(args):
    env, lam, scan_points, tol = args
    try:
        brs = cell.find_periodic_solutions(env, lam, scan_points, tol)
    except BelowGround:
        return []
    return [(b.theta, b.lam, b.initial_value) for b in brs]


def default_workers():
    try:
        return max(1, int(os.environ.get("HJHOMOG_WORKERS", "1")))
    except ValueError:
        return 1


def sweep_levels(env, lambdas, scan_points=201, tol=1e-10, workers=None):
    """Pooled ``(theta, lam, p0)`` samples of all branches at the given levels."""
    workers = default_workers() if workers is None else workers
    jobs = [(env, float(l), scan_points, tol) for l in lambdas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_sweep_one(j) for j in jobs]
    samples = [Sample(t, l, p) for res in results for (t, l, p) in res]
    return _order(samples)


def _order(samples):
    samples.sort(key=lambda s: (s.theta, s.lam, s.p0))
    out = []
    for s in samples:
        if out and abs(s.theta - out[-1].theta) <= 1e-12 * max(1.0, abs(s.theta)):
            continue
        out.append(s)
    return out


def _candidates(samples, gap_factor):
    th = np.array([s.theta for s in samples])
    d = np.diff(th)
    cands = []
    for i in range(d.size):
        left = d[i - 1] if i > 0 else 0.0
        right = d[i + 1] if i + 1 < d.size else 0.0
        res = max(left, right)
        if res > 0 and d[i] > gap_factor * res:
            cands.append(i)
    return cands, d


def _probe(env, p0, tol):
    br = cell.branch_through(env, p0, tol)
    return Sample(br.theta, br.lam, p0)


def _resolve(env, a, b, resolution, tol, depth, found, added):
    """Fill ``(a, b)`` with probes; returns False when a genuine jump remains."""
    if b.theta - a.theta <= resolution:
        return True
    if abs(b.p0 - a.p0) <= 10 * tol or depth > 60:
        found.append((a, b))
        return False
    m = _probe(env, 0.5 * (a.p0 + b.p0), tol)
    if not (a.theta < m.theta < b.theta):
        # theta(p0) must be monotone; treat a violation as an unresolved jump
        found.append((a, b))
        return False
    added.append(m)
    ok_l = _resolve(env, a, m, resolution, tol, depth + 1, found, added)
    ok_r = _resolve(env, m, b, resolution, tol, depth + 1, found, added)
    return ok_l and ok_r


def _refine_gaps(env, samples, gap_factor, tol):
    cands, d = _candidates(samples, gap_factor)
    gaps = []
    added = []
    for i in cands:
        a, b = samples[i], samples[i + 1]
        left = d[i - 1] if i > 0 else 0.0
        right = d[i + 1] if i + 1 < d.size else 0.0
        resolution = gap_factor * max(left, right)
        found = []
        _resolve(env, a, b, resolution, tol, 0, found, added)
        for ga, gb in found:
            gaps.append(Gap(theta_L=ga.theta, theta_R=gb.theta,
                            lambda_bar=0.5 * (ga.lam + gb.lam),
                            endpoint_mismatch=abs(ga.lam - gb.lam),
                            lambda_L=ga.lam, lambda_R=gb.lam, p0_L=ga.p0, p0_R=gb.p0))
    return gaps, added


def _inventory_matches(g1, g2, tol):
    if len(g1) != len(g2):
        return False
    return all(abs(a.theta_L - b.theta_L) <= tol and abs(a.theta_R - b.theta_R) <= tol
               for a, b in zip(g1, g2))


def build_effective(env, lambda_lo, lambda_hi, n_lambda, tol=1e-10, scan_points=201,
                    gap_factor=GAP_FACTOR, theta_target=None, stability_check=True,
                    workers=None, densify="auto"):
    """Sample E by a level sweep, detect gaps and assemble the plateau-filled H-bar.

    ``densify``: maximal theta spacing outside gaps; wider intervals are filled
    with probes through intermediate initial values.  ``"auto"`` uses twice the
    median spacing of the sweep, ``None`` disables filling.
    """
    envl = env.envelopes_for_level(lambda_hi)
    g0 = float(envl.gl_values[envl.p_grid.size // 2])
    if lambda_lo < g0 - tol:
        raise BelowGround(f"lambda_lo={lambda_lo:.6g} lies below gl(0)={g0:.6g}")
    if theta_target is not None and lambda_hi < float(envl.upper(theta_target)):
        raise ValueError(f"lambda_hi={lambda_hi:.6g} is below gu(theta_target)="
                         f"{float(envl.upper(theta_target)):.6g}")
    lambdas = np.linspace(lambda_lo, lambda_hi, int(n_lambda))
    samples = sweep_levels(env, lambdas, scan_points, tol, workers)
    if len(samples) < 3:
        raise SweepTooCoarse(f"only {len(samples)} branch samples on the sweep")
    gaps, added = _refine_gaps(env, samples, gap_factor, tol)

    if stability_check:
        coarse = sweep_levels(env, lambdas[::2], scan_points, tol, workers)
        if len(coarse) >= 3:
            gaps_c, _ = _refine_gaps(env, coarse, gap_factor, tol)
            spacing = max(np.diff([s.theta for s in samples]).max(), tol)
            if not _inventory_matches(gaps, gaps_c, 2 * gap_factor * spacing):
                raise SweepTooCoarse(
                    f"gap inventory changed under halving the level grid "
                    f"({len(gaps)} vs {len(gaps_c)} gaps)")

    samples = _order(samples + added)
    if densify == "auto":
        densify = 2.0 * float(np.median(np.diff([x.theta for x in samples])))
    if densify is not None:
        samples = _densify(env, samples, gaps, densify, tol)
    table = np.array([[s.theta, s.lam] for s in samples])
    p0 = np.array([s.p0 for s in samples])
    radii = sorted({1.0, radius_bound(envl, max(lambda_hi, g0))})
    lips = {R: lipschitz_constant(env, R) for R in radii}
    meta = {"lambda_lo": float(lambda_lo), "lambda_hi": float(lambda_hi),
            "n_lambda": int(n_lambda), "tol": tol, "gap_factor": gap_factor,
            "scan_points": scan_points, "densify": densify}
    return EffectiveHamiltonian(e_samples=table, gaps=gaps, envelopes=envl,
                                lipschitz_estimates=lips, p0=p0, metadata=meta)


def _densify(env, samples, gaps, max_spacing, tol):
    out = list(samples)
    gap_pairs = {(g.theta_L, g.theta_R) for g in gaps}
    changed = True
    while changed:
        changed = False
        nxt = [out[0]]
        for a, b in zip(out[:-1], out[1:]):
            if b.theta - a.theta > max_spacing and (a.theta, b.theta) not in gap_pairs \
                    and abs(b.p0 - a.p0) > 10 * tol:
                m = _probe(env, 0.5 * (a.p0 + b.p0), tol)
                if a.theta < m.theta < b.theta:
                    nxt.append(m)
                    changed = True
            nxt.append(b)
        out = nxt
    return out


def effective_from_samples(samples, envelopes, gaps=(), empirical=False, metadata=None):
    table = np.array([[t, l] for t, l in samples], dtype=float)
    order = np.lexsort((table[:, 1], table[:, 0]))
    table = table[order]
    keep = np.concatenate([[True], np.diff(table[:, 0]) > 0])
    return EffectiveHamiltonian(e_samples=table[keep], gaps=list(gaps), envelopes=envelopes,
                                empirical=empirical, metadata=dict(metadata or {}))


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

def lipschitz_audit(eff, env, report=None, tol=1e-8):
    """``{R: (K_R bound, max observed slope)}`` over consecutive E samples."""
    th, lam = eff.theta, eff.lam
    slopes = np.abs(np.diff(lam) / np.diff(th))
    in_gap = np.zeros(slopes.size, dtype=bool)
    for g in eff.gaps:
        in_gap |= (th[:-1] >= g.theta_L) & (th[1:] <= g.theta_R)
    envl = eff.envelopes
    g0 = float(envl.gl_values[envl.p_grid.size // 2])
    need = np.array([max(radius_bound(envl, max(l1, g0)), radius_bound(envl, max(l2, g0)))
                     for l1, l2 in zip(lam[:-1], lam[1:])])
    out = {}
    cut = np.unique(np.quantile(need, np.linspace(0, 1, 6)))
    for R in cut:
        sel = (need <= R + 1e-12) & ~in_gap
        if not np.any(sel):
            continue
        if report is not None:
            try:
                K = report.lipschitz(R)
            except OutOfRange:
                K = lipschitz_constant(env, R)
        else:
            K = lipschitz_constant(env, R)
        out[float(R)] = (float(K), float(slopes[sel].max()))
    return out


def brute_force_inventory(env, p_lo, p_hi, n_p, gap_factor=GAP_FACTOR, tol=1e-10):
    """Gap inventory from a dense sweep over initial values (independent of the level sweep)."""
    ps = np.linspace(p_lo, p_hi, int(n_p))
    samples = [_probe(env, p, tol) for p in ps]
    th = np.array([s.theta for s in samples])
    d = np.diff(th)
    med = np.median(d)
    gaps = []
    for i in np.nonzero(d > gap_factor * 4 * med)[0]:
        a, b = samples[i], samples[i + 1]
        gaps.append(Gap(a.theta, b.theta, 0.5 * (a.lam + b.lam), abs(a.lam - b.lam), a.lam, b.lam,
                        a.p0, b.p0))
    return gaps, samples
