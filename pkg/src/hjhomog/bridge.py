"""Bridging profiles across a plateau and the strict sub/supersolution perturbation.

An up bridge runs at level ``lam_bar + delta``: it starts on the lower branch
``f1`` and leaves the strip through the upper branch ``f2``.  Gluing
``f1 | bridge | f2`` gives a C^1 function ``F`` with ``a F'' + H(F') <= lam_bar + delta``
piecewise.  The down bridge is the mirror image at ``lam_bar - delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cell
from .errors import (InequalityViolation, NoFiniteExit, NotOrdered, WrongSideExit)
from .ode import shoot

PIECES = ("left_branch", "bridge", "right_branch")
DEFAULT_TOL = 1e-12
DEFAULT_SPAN_PERIODS = 50
DEFAULT_C_POINTS = 16


def _period(env):
    return env.period if env.period is not None else 1.0


@dataclass(eq=False)
class BridgeProfile:
    direction: str
    delta: float
    lam_bar: float
    z_start: float
    z_end: float
    c: float
    f_bridge: object
    start_branch: object
    target_branch: object
    env: object
    defect: float = 0.0
    attempts: list = field(default_factory=list)

    @property
    def level(self):
        return self.lam_bar + self.delta if self.direction == "up" else self.lam_bar - self.delta

    @property
    def length(self):
        return self.z_end - self.z_start

    @property
    def lower(self):
        return self.start_branch if self.direction == "up" else self.target_branch

    @property
    def upper(self):
        return self.target_branch if self.direction == "up" else self.start_branch

    def with_defect(self, coef):
        """Copy with ``coef * (x - z_start)^2`` added to ``F`` on the bridge piece."""
        return BridgeProfile(self.direction, self.delta, self.lam_bar, self.z_start, self.z_end,
                             self.c, self.f_bridge, self.start_branch, self.target_branch,
                             self.env, self.defect + float(coef), list(self.attempts))

    # -- the glued function --------------------------------------------------
    def piece_of(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.z_start, 0, np.where(x <= self.z_end, 1, 2))

    def _bridge_F(self, x):
        vals = np.array([self.f_bridge.integral(self.z_start, t) for t in np.atleast_1d(x)])
        return vals + self.defect * (np.atleast_1d(x) - self.z_start) ** 2

    def F(self, x):
        """Antiderivative normalised by ``F(z_start) = 0``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        pc = self.piece_of(x)
        left, mid, right = pc == 0, pc == 1, pc == 2
        if left.any():
            out[left] = (self.start_branch.antiderivative(x[left])
                         - self.start_branch.antiderivative(self.z_start))
        if mid.any():
            out[mid] = self._bridge_F(x[mid])
        if right.any():
            end = float(self._bridge_F(self.z_end)[0])
            out[right] = end + (self.target_branch.antiderivative(x[right])
                                - self.target_branch.antiderivative(self.z_end))
        return out

    def dF(self, x, piece=None):
        """``F'``; ``piece`` forces one-sided evaluation (used at the joints)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pc = self.piece_of(x) if piece is None else np.full(x.shape, piece)
        out = np.empty_like(x)
        for k in range(3):
            m = pc == k
            if not m.any():
                continue
            if k == 0:
                out[m] = self.start_branch(x[m])
            elif k == 1:
                out[m] = self.f_bridge(x[m]) + 2.0 * self.defect * (x[m] - self.z_start)
            else:
                out[m] = self.target_branch(x[m])
        return out

    def d2F(self, x, piece=None):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pc = self.piece_of(x) if piece is None else np.full(x.shape, piece)
        out = np.empty_like(x)
        for k in range(3):
            m = pc == k
            if not m.any():
                continue
            if k == 0:
                out[m] = self.start_branch.derivative(x[m])
            elif k == 1:
                out[m] = self.f_bridge.derivative(x[m]) + 2.0 * self.defect
            else:
                out[m] = self.target_branch.derivative(x[m])
        return out

    @property
    def joint_mismatch(self):
        """Jumps of ``F'`` at ``z_start`` and ``z_end``."""
        a = abs(float(self.dF(self.z_start, 1)[0] - self.dF(self.z_start, 0)[0]))
        b = abs(float(self.dF(self.z_end, 2)[0] - self.dF(self.z_end, 1)[0]))
        return a, b

    def endpoint_errors(self):
        """``|f_bridge - branch|`` at both ends of the bridge."""
        s = abs(float(self.f_bridge(self.z_start)) - float(self.start_branch(self.z_start)))
        e = abs(float(self.f_bridge(self.z_end)) - float(self.target_branch(self.z_end)))
        return s, e

    def strip_margin(self, n=512):
        """Smallest distance from the bridge to either branch on the open interior."""
        x = np.linspace(self.z_start, self.z_end, n + 2)[1:-1]
        f = self.f_bridge(x)
        return float(np.min(np.minimum(f - self.lower(x), self.upper(x) - f)))

    def tail_slopes(self):
        """Average slope of ``F`` over one period left of ``z_start`` and right of ``z_end``."""
        L = _period(self.env)
        left = float(self.F(self.z_start)[0] - self.F(self.z_start - L)[0]) / L
        right = float(self.F(self.z_end + L)[0] - self.F(self.z_end)[0]) / L
        return left, right

    def rows(self, pad_periods=2.0, per_piece=200):
        """Samples ``(x, f, F, piece)``; joints appear once on each side."""
        L = _period(self.env)
        spans = [(self.z_start - pad_periods * L, self.z_start),
                 (self.z_start, self.z_end),
                 (self.z_end, self.z_end + pad_periods * L)]
        out = []
        for k, (lo, hi) in enumerate(spans):
            x = np.linspace(lo, hi, per_piece)
            f = self.dF(x, k)
            F = self.F(x)
            if k == 0:
                F[-1] = 0.0
            for xi, fi, Fi in zip(x, f, F):
                out.append((float(xi), float(fi), float(Fi), PIECES[k]))
        return out

    def summary(self):
        js, je = self.joint_mismatch
        return {"direction": self.direction, "delta": self.delta, "lambda_bar": self.lam_bar,
                "level": self.level, "c": self.c, "z_start": self.z_start, "z_end": self.z_end,
                "length": self.length, "joint_mismatch": [js, je],
                "bridge_residual": self.f_bridge.max_residual}


def _pick(branches, theta):
    return min(branches, key=lambda b: abs(b.theta - theta))


def _check_ordered(f1, f2, n=256):
    L = f1.period
    x = np.linspace(0.0, L, n, endpoint=False)
    gap = f2(x) - f1(x)
    if not np.all(gap > 0):
        raise NotOrdered(f"branches are not strictly ordered (min gap {gap.min():.3g})")


def bulge_pair(env, lam_bar, split=0.0, tol=DEFAULT_TOL, scan_points=201):
    """Adjacent branches at ``lam_bar`` whose means straddle ``split``.

    Useful when ``H-bar`` has a strict local maximum above ``lam_bar``: the up bridge
    then exists for ``delta`` beyond the bulge height and the down bridge for any ``delta``.
    """
    branches = cell.find_periodic_solutions(env, lam_bar, scan_points, tol)
    left = [b for b in branches if b.theta < split]
    right = [b for b in branches if b.theta > split]
    if not left or not right:
        raise ValueError(f"no branches on both sides of theta={split} at level {lam_bar}")
    f1, f2 = left[-1], right[0]
    _check_ordered(f1, f2)
    return f1, f2


def gap_branches(env, gap, tol=DEFAULT_TOL, scan_points=201):
    """The two branches at the plateau level closest to the gap end points."""
    branches = cell.find_periodic_solutions(env, gap.lambda_bar, scan_points, tol)
    if len(branches) < 2:
        raise ValueError(f"fewer than two branches at plateau level {gap.lambda_bar}")
    f1, f2 = _pick(branches, gap.theta_L), _pick(branches, gap.theta_R)
    if f1.theta > f2.theta:
        f1, f2 = f2, f1
    _check_ordered(f1, f2)
    return f1, f2


def build_bridge_between(env, f1, f2, lam_bar, delta, direction="up", c_grid=None,
                         x_max=None, tol=DEFAULT_TOL):
    """Bridge between the ordered branches ``f1 < f2`` at level ``lam_bar +- delta``.

    ``x_max`` is the horizon measured from each launch point ``c``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    L = _period(env)
    if c_grid is None:
        c_grid = L * np.arange(DEFAULT_C_POINTS) / DEFAULT_C_POINTS
    if x_max is None:
        x_max = DEFAULT_SPAN_PERIODS * L
    up = direction == "up"
    level = lam_bar + delta if up else lam_bar - delta
    start, target = (f1, f2) if up else (f2, f1)
    good, bad = ("hit_upper", "hit_lower") if up else ("hit_lower", "hit_upper")
    attempts = []
    for c in np.asarray(c_grid, dtype=float):
        out = shoot(env, level, float(c), float(start(c)), f1, f2, float(c) + x_max, tol)
        attempts.append((float(c), out.exit_side, out.exit_x))
        if out.exit_side == bad:
            raise WrongSideExit(f"{direction} bridge from c={c:.6g} left through the starting "
                                f"branch at x={out.exit_x:.9g}")
        if out.exit_side == good:
            return BridgeProfile(direction, float(delta), float(lam_bar), float(c),
                                 float(out.exit_x), float(c), out.solution, start, target, env,
                                 attempts=attempts)
    raise NoFiniteExit(f"{direction} bridge at level {level:.9g}: every launch point survived "
                       f"{x_max:.6g} units")


def build_bridge(env, eff, gap_index, delta, direction="up", c_grid=None, x_max=None,
                 tol=DEFAULT_TOL):
    """Bridge across gap ``gap_index`` of ``eff`` (raises NoGap when there is none)."""
    gap = eff.gap(gap_index)
    f1, f2 = gap_branches(env, gap, tol)
    return build_bridge_between(env, f1, f2, gap.lambda_bar, delta, direction, c_grid, x_max, tol)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass
class BridgeReport:
    direction: str
    level: float
    worst: dict
    joint_mismatch: tuple
    tol: float
    joint_tol: float

    @property
    def worst_violation(self):
        return max(self.worst.values())

    @property
    def ok(self):
        return self.worst_violation <= self.tol and max(self.joint_mismatch) <= self.joint_tol

    def raise_if_failed(self):
        if not self.ok:
            raise InequalityViolation(
                f"{self.direction} bridge check failed: worst violation per piece {self.worst}, "
                f"joint mismatch {self.joint_mismatch}")
        return self

    def to_dict(self):
        return {"direction": self.direction, "level": self.level, "worst": dict(self.worst),
                "joint_mismatch": list(self.joint_mismatch), "ok": self.ok}


def verify_piecewise_supersolution(profile, env=None, n_check=200, tol=1e-6, joint_tol=1e-6):
    """Worst violation of ``a F'' + H(F') <= level`` (up) or ``>= level`` (down) per piece.

    Each branch piece is checked over one period next to its joint and the bridge
    over its open interior.
    """
    env = profile.env if env is None else env
    L = _period(env)
    spans = [(profile.z_start - L, profile.z_start), (profile.z_start, profile.z_end),
             (profile.z_end, profile.z_end + L)]
    sign = 1.0 if profile.direction == "up" else -1.0
    worst = {}
    for k, (lo, hi) in enumerate(spans):
        x = np.linspace(lo, hi, n_check + 2)[1:-1]
        lhs = env.a_eval(x) * profile.d2F(x, k) + env.h_eval(profile.dF(x, k), x)
        worst[PIECES[k]] = max(0.0, float(np.max(sign * (lhs - profile.level))))
    return BridgeReport(profile.direction, profile.level, worst, profile.joint_mismatch,
                        tol, joint_tol)


# ---------------------------------------------------------------------------
# strict perturbation
# ---------------------------------------------------------------------------

def psi(x):
    """``(2/pi) int_0^x arctan``: convex, ``|psi'| <= 1`` and ``0 <= psi'' <= 1``."""
    x = np.asarray(x, dtype=float)
    return (2.0 / math.pi) * (x * np.arctan(x) - 0.5 * np.log1p(x * x))


def dpsi(x):
    return (2.0 / math.pi) * np.arctan(np.asarray(x, dtype=float))


def d2psi(x):
    x = np.asarray(x, dtype=float)
    return (2.0 / math.pi) / (1.0 + x * x)


@dataclass
class StrictPerturbation:
    """``t lam + s t (K+1) delta + F(x) + s delta psi(x) + s C`` with ``s = sign``.

    ``sign = -1`` gives a strict subsolution of ``u_t = a u_xx + H(u_x)``,
    ``sign = +1`` a strict supersolution, as long as the gradient stays in the
    ball where ``K`` bounds the Lipschitz constant of ``H``.
    """

    F: object
    dF: object
    d2F: object
    lam: float
    delta: float
    K_R: float
    sign: int
    C: float = 0.0

    @property
    def kind(self):
        return "subsolution" if self.sign < 0 else "supersolution"

    def value(self, t, x):
        s = self.sign
        return (t * self.lam + s * t * (self.K_R + 1.0) * self.delta + self.F(x)
                + s * self.delta * psi(x) + s * self.C)

    def dt(self, t, x):
        return np.full(np.shape(x), self.lam + self.sign * (self.K_R + 1.0) * self.delta)

    def dx(self, t, x):
        return self.dF(x) + self.sign * self.delta * dpsi(x)

    def dxx(self, t, x):
        return self.d2F(x) + self.sign * self.delta * d2psi(x)

    def residual(self, env, t, x):
        """``u_t - a u_xx - H(u_x)``: <= 0 for sub-, >= 0 for supersolutions."""
        x = np.asarray(x, dtype=float)
        return self.dt(t, x) - env.a_eval(x) * self.dxx(t, x) - env.h_eval(self.dx(t, x), x)

    def worst(self, env, x, t=0.0):
        """Largest residual in the wrong direction (<= 0 means the inequality holds)."""
        return float(np.max(-self.sign * self.residual(env, t, x)))


def build_strict_perturbation(base, delta, K_R, sign, C=0.0):
    """Perturb a corrector ``(F, lam)`` into a strict sub (``sign=-1``) or super (``+1``) solution.

    ``F`` is a branch (its antiderivative is used), a bridge profile, or a
    triple of callables ``(F, F', F'')``.
    """
    F, lam = base
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if isinstance(F, cell.StationaryBranch):
        funcs = (F.antiderivative, F, F.derivative)
    elif isinstance(F, BridgeProfile):
        funcs = (F.F, F.dF, F.d2F)
    else:
        funcs = tuple(F)
    return StrictPerturbation(funcs[0], funcs[1], funcs[2], float(lam), float(delta),
                              float(K_R), -1 if sign < 0 else 1, float(C))
