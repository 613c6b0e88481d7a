"""Media, growth envelopes, the radius bound and sampled assumption checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BelowGround, NonFinite, NonPositiveDiffusion, NotCoercive, OutOfRange

TWO_PI = 2.0 * math.pi


class Field:
    """Stationary scalar field: constant + cosine modes + Gaussian bumps.

    ``modes`` rows are ``(amp, freq, phase)`` and contribute
    ``amp * cos(2 pi freq x + phase)``; ``freq`` is in cycles per unit length.
    """

    def __init__(self, const=0.0, modes=(), bump_amps=(), bump_centers=(), bump_width=1.0):
        self.const = float(const)
        self.modes = np.asarray(modes, dtype=float).reshape(-1, 3)
        amps = np.asarray(bump_amps, dtype=float).ravel()
        centers = np.asarray(bump_centers, dtype=float).ravel()
        if amps.shape != centers.shape:
            raise ValueError("bump_amps and bump_centers differ in length")
        order = np.argsort(centers, kind="stable")
        self.bump_amps = amps[order]
        self.bump_centers = centers[order]
        self.bump_width = float(bump_width)
        trig = self.modes.copy()
        trig[:, 1] *= TWO_PI
        self._packed = (
            np.array([self.const, self.bump_width]),
            np.ascontiguousarray(trig),
            np.ascontiguousarray(np.vstack([self.bump_amps, self.bump_centers])),
        )

    @classmethod
    def constant(cls, value):
        return cls(const=value)

    @classmethod
    def from_spec(cls, spec):
        """Build from a config value: a number or ``{const, modes}``."""
        if spec is None:
            return cls()
        if isinstance(spec, (int, float)):
            return cls(const=spec)
        if not isinstance(spec, dict):
            raise TypeError(f"field spec must be a number or mapping, got {type(spec).__name__}")
        rows = []
        for mode in spec.get("modes", []):
            if isinstance(mode, dict):
                phase = float(mode.get("phase", 0.0))
                if mode.get("kind", "cos") == "sin":
                    phase -= math.pi / 2
                rows.append((float(mode["amp"]), float(mode["freq"]), phase))
            else:
                rows.append(tuple(float(v) for v in mode))
        return cls(
            const=spec.get("const", 0.0),
            modes=rows,
            bump_amps=spec.get("bump_amps", ()),
            bump_centers=spec.get("bump_centers", ()),
            bump_width=spec.get("bump_width", 1.0),
        )

    def to_spec(self):
        spec = {"const": self.const}
        if len(self.modes):
            spec["modes"] = [{"amp": a, "freq": f, "phase": p} for a, f, p in self.modes.tolist()]
        if self.bump_amps.size:
            spec["bump_amps"] = self.bump_amps.tolist()
            spec["bump_centers"] = self.bump_centers.tolist()
            spec["bump_width"] = self.bump_width
        return spec

    @property
    def packed(self):
        return self._packed

    @property
    def is_constant(self):
        return not len(self.modes) and not self.bump_amps.size

    def __call__(self, x):
        return kernels.field_many(x, *self._packed)

    def periodic_with(self, period, tol=1e-9):
        if self.bump_amps.size:
            return False
        cycles = self.modes[:, 1] * period
        return bool(np.all(np.abs(cycles - np.round(cycles)) <= tol))


class Environment:
    """A one-dimensional medium ``(a, H)`` with ``H(p, x) = poly(p - b(x)) + V(x)``."""

    period = None

    def __init__(self, diffusion, potential, shift=None, poly=(0.0, 0.0, 1.0), label=""):
        self.diffusion = diffusion if isinstance(diffusion, Field) else Field.from_spec(diffusion)
        self.potential = potential if isinstance(potential, Field) else Field.from_spec(potential)
        self.shift = shift if isinstance(shift, Field) else Field.from_spec(shift)
        self.poly = np.trim_zeros(np.asarray(poly, dtype=float), "b")
        if self.poly.size == 0:
            self.poly = np.zeros(1)
        self.label = label
        self.model = (*self.diffusion.packed, *self.shift.packed, *self.potential.packed,
                      np.ascontiguousarray(self.poly))
        self._cache = {}

    # evaluation -----------------------------------------------------------
    def a_eval(self, x):
        return self.diffusion(x)

    def h_eval(self, p, x):
        return kernels.ham_many(p, x, self.model)

    def dh_dp_eval(self, p, x):
        return kernels.dham_many(p, x, self.model)

    @property
    def x_independent(self):
        return self.diffusion.is_constant and self.potential.is_constant and self.shift.is_constant

    def sample_points(self, n):
        raise NotImplementedError

    def with_seed(self, seed):
        return self

    def describe(self):
        return {
            "label": self.label,
            "poly": self.poly.tolist(),
            "potential": self.potential.to_spec(),
            "shift": self.shift.to_spec(),
            "diffusion": self.diffusion.to_spec(),
        }

    # cached envelopes -------------------------------------------------------
    def envelopes_for_level(self, level, dp=1e-4, x_samples=64):
        """Envelopes on a grid wide enough that ``gl`` exceeds ``level`` at its edge."""
        p_max = 2.0
        while True:
            edge = min(self.h_eval(p_max, self.sample_points(x_samples)).min(),
                       self.h_eval(-p_max, self.sample_points(x_samples)).min())
            if edge > level + 1.0 or p_max >= 1024:
                break
            p_max *= 2.0
        best = None
        for (pm, d, xs), env in self._cache.items():
            if pm >= p_max and d <= dp and xs >= x_samples:
                if best is None or pm < best[0]:
                    best = (pm, env)
        if best is not None:
            return best[1]
        n = 2 * int(round(p_max / dp)) + 1
        grid = np.linspace(-p_max, p_max, n)
        env = compute_envelopes(self, grid, x_samples)
        self._cache[(p_max, dp, x_samples)] = env
        return env


class PeriodicEnvironment(Environment):
    def __init__(self, period=1.0, diffusion=1.0, potential=0.0, shift=0.0,
                 poly=(0.0, 0.0, 1.0), label="periodic"):
        super().__init__(diffusion, potential, shift, poly, label)
        self.period = float(period)
        if self.period <= 0:
            raise ValueError("period must be positive")
        for name, fld in (("diffusion", self.diffusion), ("potential", self.potential),
                          ("shift", self.shift)):
            if not fld.periodic_with(self.period):
                raise ValueError(f"{name} field is not {self.period}-periodic")

    def sample_points(self, n):
        if self.x_independent:
            return np.zeros(1)
        return np.linspace(0.0, self.period, int(n), endpoint=False)

    def describe(self):
        d = super().describe()
        d.update(kind="periodic", period=self.period)
        return d


GENERATOR_KINDS = ("random_phase_trig", "smoothed_bumps")

_DEFAULT_FREQS = (1.0, math.sqrt(2.0), math.sqrt(5.0) / 2.0)


class RandomEnvironment(Environment):
    """One realisation of a seeded stationary-ergodic generator on ``window``.

    ``random_phase_trig``: every field is ``mean + amplitude * sum_k w_k cos(2 pi nu_k x
    + phi_k) / sum_k |w_k|`` with fixed, rationally independent ``nu_k`` and
    i.i.d. uniform phases, so the law is shift invariant and ``|V| <= amplitude``.

    ``smoothed_bumps``: the potential is shot noise, Gaussian bumps of width
    ``smoothing_width`` at Poisson points of intensity ``bump_density`` with
    amplitudes uniform on ``[-A, A]``; the diffusion is the constant
    ``diffusion_mean``.
    """

    def __init__(self, seed, generator_kind="random_phase_trig", params=None,
                 window=(0.0, 1000.0), poly=(0.0, 0.0, 1.0), label=""):
        if generator_kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator_kind {generator_kind!r}")
        self.seed = int(seed)
        self.generator_kind = generator_kind
        self.params = dict(params or {})
        self.window = (float(window[0]), float(window[1]))
        if not self.window[1] > self.window[0]:
            raise ValueError("window must satisfy x_lo < x_hi")
        rng = np.random.default_rng([self.seed, GENERATOR_KINDS.index(generator_kind)])
        p = self.params
        if generator_kind == "random_phase_trig":
            freqs = np.asarray(p.get("frequencies", _DEFAULT_FREQS), dtype=float)
            weights = np.asarray(p.get("weights", np.ones_like(freqs)), dtype=float)
            norm = np.abs(weights).sum()

            def trig(mean, amplitude):
                phases = rng.uniform(0.0, TWO_PI, size=freqs.size)
                if amplitude == 0.0:
                    return Field(const=mean)
                modes = np.column_stack([amplitude * weights / norm, freqs, phases])
                return Field(const=mean, modes=modes)

            potential = trig(0.0, float(p.get("potential_amplitude", 1.0)))
            shift = trig(0.0, float(p.get("shift_amplitude", 0.0)))
            a_mean = float(p.get("diffusion_mean", 1.0))
            a_amp = float(p.get("diffusion_amplitude", 0.0))
            diffusion = trig(a_mean, a_amp)
            self.a_floor = a_mean - abs(a_amp)
            a_ceiling = a_mean + abs(a_amp)
        else:
            density = float(p.get("bump_density", 1.0))
            width = float(p.get("smoothing_width", 0.25))
            amp = float(p.get("potential_amplitude", 1.0))
            pad = 8.0 * width
            lo, hi = self.window[0] - pad, self.window[1] + pad
            count = rng.poisson(density * (hi - lo))
            centers = rng.uniform(lo, hi, size=count)
            amps = rng.uniform(-amp, amp, size=count)
            potential = Field(const=0.0, bump_amps=amps, bump_centers=centers, bump_width=width)
            shift = Field()
            a_mean = float(p.get("diffusion_mean", 1.0))
            diffusion = Field(const=a_mean)
            self.a_floor = a_ceiling = a_mean
        if not (0.0 < self.a_floor and a_ceiling <= 1.0 + 1e-12):
            raise NonPositiveDiffusion(
                f"generator diffusion range [{self.a_floor}, {a_ceiling}] is not inside (0, 1]")
        super().__init__(diffusion, potential, shift, poly,
                         label or f"{generator_kind}[seed={self.seed}]")

    def with_seed(self, seed):
        return RandomEnvironment(seed, self.generator_kind, self.params, self.window,
                                 self.poly, label="")

    def sample_points(self, n):
        # at least 8 points per unit length so sup/inf over the window are not undersampled
        dense = int(math.ceil(8.0 * (self.window[1] - self.window[0]))) + 1
        return np.linspace(self.window[0], self.window[1], max(int(n), dense))

    def describe(self):
        d = super().describe()
        d.update(kind=self.generator_kind, seed=self.seed, params=self.params,
                 window=list(self.window))
        return d


# ---------------------------------------------------------------------------
# standard media used throughout the tests and the CLI
# ---------------------------------------------------------------------------

def x_independent(poly, label="x-independent"):
    return PeriodicEnvironment(period=1.0, poly=poly, label=label)


def quadratic_cosine(amplitude=1.0):
    """``H = p^2 + amplitude cos(2 pi x)``, ``a = 1``."""
    return PeriodicEnvironment(potential={"modes": [[amplitude, 1.0, 0.0]]},
                               poly=(0.0, 0.0, 1.0), label="quadratic")


def nonconvex_benchmark(amplitude=2.0):
    """``H = (p^2 - 1)^2 + amplitude cos(2 pi x)``, ``a = 1``."""
    return PeriodicEnvironment(potential={"modes": [[amplitude, 1.0, 0.0]]},
                               poly=(1.0, 0.0, -2.0, 0.0, 1.0), label="nonconvex")


def environment_from_config(block):
    """Build an environment from the ``environment`` block of a scenario config."""
    from .errors import ConfigError

    if not isinstance(block, dict):
        raise ConfigError("environment", "must be a mapping")
    kind = block.get("kind")
    if kind is None:
        raise ConfigError("environment.kind", "missing")
    poly = block.get("poly", [0.0, 0.0, 1.0])
    try:
        if kind == "periodic":
            if "period" not in block:
                raise ConfigError("environment.period", "missing (required for periodic media)")
            return PeriodicEnvironment(
                period=block["period"],
                diffusion=block.get("diffusion", 1.0),
                potential=block.get("potential", 0.0),
                shift=block.get("shift", 0.0),
                poly=poly,
                label=block.get("label", "periodic"),
            )
        if kind in GENERATOR_KINDS:
            if "seed" not in block:
                raise ConfigError("environment.seed", "missing (required for random media)")
            return RandomEnvironment(
                seed=block["seed"], generator_kind=kind, params=block.get("params", {}),
                window=block.get("window", (0.0, 1000.0)), poly=poly,
                label=block.get("label", ""),
            )
    except (TypeError, KeyError) as exc:
        raise ConfigError("environment", str(exc)) from exc
    raise ConfigError("environment.kind", f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# growth envelopes and the radius bound
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GrowthEnvelopes:
    """Even, nondecreasing-in-|p| lower/upper bounds ``gl <= H <= gu`` on a grid."""

    p_grid: np.ndarray
    gl_values: np.ndarray
    gu_values: np.ndarray
    interp_tol: float = 0.0

    def __post_init__(self):
        half = self.p_grid >= 0
        self._p_pos = self.p_grid[half]
        self._gl_pos = self.gl_values[half]
        self._gu_pos = self.gu_values[half]

    @property
    def p_max(self):
        return float(self._p_pos[-1])

    def lower(self, p):
        """Conservative ``gl``: value at the grid node at or below ``|p|``."""
        idx = np.searchsorted(self._p_pos, np.abs(p), side="right") - 1
        return self._gl_pos[np.clip(idx, 0, self._p_pos.size - 1)]

    def upper(self, p):
        """Conservative ``gu``: value at the grid node at or above ``|p|`` (inf off-grid)."""
        ap = np.abs(np.asarray(p, dtype=float))
        idx = np.searchsorted(self._p_pos, ap, side="left")
        inside = idx < self._p_pos.size
        out = np.where(inside, self._gu_pos[np.minimum(idx, self._p_pos.size - 1)], np.inf)
        return out if out.ndim else float(out)

    def gl(self, p):
        return np.interp(np.abs(p), self._p_pos, self._gl_pos)

    def gu(self, p):
        return np.interp(np.abs(p), self._p_pos, self._gu_pos)

    def radius_bound(self, lam):
        return radius_bound(self, lam)

    def rows(self):
        return np.column_stack([self.p_grid, self.gl_values, self.gu_values])


def compute_envelopes(env, p_grid, x_samples=64, coercivity_margin=1e-8):
    """Tightest even, monotone-in-|p| envelopes of ``inf_x H`` and ``sup_x H``."""
    p_grid = np.asarray(p_grid, dtype=float)
    if p_grid.ndim != 1 or p_grid.size < 3 or np.any(np.diff(p_grid) <= 0):
        raise ValueError("p_grid must be a strictly increasing vector")
    if not np.allclose(p_grid, -p_grid[::-1], atol=1e-12 * max(1.0, abs(p_grid).max())):
        raise ValueError("p_grid must be symmetric about 0")
    xs = env.sample_points(x_samples)
    lo = np.full(p_grid.size, np.inf)
    hi = np.full(p_grid.size, -np.inf)
    prev = None
    jump = 0.0
    for x in xs:
        h = env.h_eval(p_grid, x)
        if not np.all(np.isfinite(h)):
            raise NonFinite(f"H is not finite at x={x}")
        np.minimum(lo, h, out=lo)
        np.maximum(hi, h, out=hi)
        if prev is not None:
            jump = max(jump, float(np.abs(h - prev).max()))
        prev = h
    n = p_grid.size
    mid = n // 2
    # fold the two halves onto |p|
    m_inf = np.minimum(lo[mid:], lo[mid::-1])
    m_sup = np.maximum(hi[mid:], hi[mid::-1])
    gl_pos = np.minimum.accumulate(m_inf[::-1])[::-1]
    gu_pos = np.maximum.accumulate(m_sup)
    tail = max(1, int(0.1 * gl_pos.size))
    if not (gl_pos[-1] - gl_pos[-1 - tail] > coercivity_margin and gl_pos[-1] > gl_pos[0]):
        raise NotCoercive(
            f"gl does not grow near the grid edge (gl(0)={gl_pos[0]:.6g}, "
            f"gl({p_grid[-1]:.3g})={gl_pos[-1]:.6g})")
    gl = np.concatenate([gl_pos[:0:-1], gl_pos])
    gu = np.concatenate([gu_pos[:0:-1], gu_pos])
    cell = max(float(np.abs(np.diff(gl)).max()), float(np.abs(np.diff(gu)).max()))
    return GrowthEnvelopes(p_grid=p_grid, gl_values=gl, gu_values=gu, interp_tol=cell + jump)


def radius_bound(envelopes, lam):
    """Largest ``p >= 0`` with ``gl(p) <= lam``, interpolated inside the bracketing cell."""
    p = envelopes._p_pos
    g = envelopes._gl_pos
    if lam < g[0]:
        raise BelowGround(f"level {lam:.6g} lies below gl(0) = {g[0]:.6g}")
    k = int(np.searchsorted(g, lam, side="right")) - 1
    if k >= p.size - 1:
        raise OutOfRange(f"gl stays below {lam:.6g} on the whole grid; enlarge p_max")
    return float(p[k] + (lam - g[k]) / (g[k + 1] - g[k]) * (p[k + 1] - p[k]))


def lipschitz_constant(env, R, n_p=2001, x_samples=64):
    """Finite-difference estimate of ``K_R = sup |dH/dp|`` over ``|p| <= R``."""
    ps = np.linspace(-R, R, n_p)
    best = 0.0
    for x in env.sample_points(x_samples):
        h = env.h_eval(ps, x)
        best = max(best, float(np.abs(np.diff(h)).max() / (ps[1] - ps[0])))
    return best


# ---------------------------------------------------------------------------
# assumption validation
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    kappa_hat: float
    lipschitz_table: dict
    modulus_table: dict
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def lipschitz(self, R):
        """K_R from the table, taking the next tabulated radius at or above ``R``."""
        keys = sorted(self.lipschitz_table)
        for k in keys:
            if k >= R:
                return self.lipschitz_table[k]
        raise OutOfRange(f"R={R} beyond tabulated radii {keys}")


def validate_assumptions(env, p_max, n_samples, tol=1e-9):
    """Sampled checks of the standing assumptions on ``(a, H)``."""
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    if n_samples < 16:
        raise ValueError("n_samples must be at least 16")
    violations = []
    if env.period is not None:
        xs = np.linspace(0.0, env.period, n_samples, endpoint=False)
    else:
        xs = env.sample_points(n_samples)
    a = env.a_eval(xs)
    if not np.all(np.isfinite(a)):
        raise NonFinite("diffusion coefficient is not finite")
    if np.any(a <= 0):
        i = int(np.argmin(a))
        raise NonPositiveDiffusion(f"a({xs[i]:.6g}) = {a[i]:.6g} <= 0")
    if a.max() > 1.0 + tol:
        i = int(np.argmax(a))
        violations.append(("A-range", float(xs[i]), float(a[i] - 1.0)))
    sq = np.sqrt(a)
    kappa = float(np.abs(np.diff(sq)).max() / (xs[1] - xs[0])) if xs.size > 1 else 0.0

    ps = np.linspace(-p_max, p_max, max(2 * n_samples + 1, 401))
    hgrid = env.h_eval(ps[None, :], xs[:, None])
    if not np.all(np.isfinite(hgrid)):
        raise NonFinite("H is not finite on the sampled box")

    if env.period is not None:
        drift_a = float(np.abs(env.a_eval(xs + env.period) - a).max())
        drift_h = float(np.abs(env.h_eval(ps[None, :], xs[:, None] + env.period) - hgrid).max())
        if drift_a > tol:
            violations.append(("A1-periodicity", 0.0, drift_a))
        if drift_h > tol * max(1.0, float(np.abs(hgrid).max())):
            violations.append(("H1-periodicity", 0.0, drift_h))

    lips = {}
    radii = sorted({1.0, p_max / 2.0, float(p_max)})
    dp = ps[1] - ps[0]
    for R in radii:
        sel = np.abs(ps) <= R + 1e-12
        sub = hgrid[:, sel]
        lips[R] = float(np.abs(np.diff(sub, axis=1)).max() / dp) if sub.shape[1] > 1 else 0.0

    modulus = {}
    span = env.period if env.period is not None else (xs[-1] - xs[0])
    dx = span / xs.size
    offsets = dx * 2.0 ** np.arange(-1, max(1, int(np.log2(xs.size)) - 1))
    for R in radii:
        pr = ps[np.abs(ps) <= R + 1e-12][::4]
        base = env.h_eval(pr[None, :], xs[:, None])
        vals = []
        for r in offsets:
            shifted = env.h_eval(pr[None, :], xs[:, None] + r)
            vals.append(float(np.abs(shifted - base).max()))
        m = np.asarray(vals)
        modulus[R] = (offsets[1:].copy(), m[1:])
        # uniform continuity: halving the offset must shrink the modulus (a jump would not)
        if m[1] > tol and m[0] > 0.75 * m[1] + tol:
            violations.append(("H4-modulus", float(offsets[0]), float(m[0] / m[1])))

    half = ps >= 0
    inf_h = hgrid.min(axis=0)
    pos = ps[half]
    neg_inf = env.h_eval(-pos[None, :], xs[:, None]).min(axis=0)
    m_inf = np.minimum(inf_h[half], neg_inf)
    gl = np.minimum.accumulate(m_inf[::-1])[::-1]
    if not gl[-1] > gl[0] + tol:
        violations.append(("H2-coercivity", float(p_max), float(gl[-1] - gl[0])))
    return AssumptionReport(kappa_hat=kappa, lipschitz_table=lips, modulus_table=modulus,
                            violations=violations)
