"""Hot numerical kernels.

Every kernel here is written so that it runs both under ``numba.njit`` and as
plain Python.  Array-level helpers additionally carry a vectorised numpy
implementation that is used when numba is disabled (see ``_accel``).

A medium is passed to the kernels as a flat ``model`` tuple::

    (a_coef, a_trig, a_bumps, b_coef, b_trig, b_bumps, v_coef, v_trig, v_bumps, poly)

Each field ``(coef, trig, bumps)`` evaluates to
``coef[0] + sum_k trig[k,0] cos(trig[k,1] x + trig[k,2])
+ sum_j bumps[0,j] exp(-(x - bumps[1,j])**2 / (2 coef[1]**2))``
with bump centres sorted.  The Hamiltonian is
``H(p, x) = sum_k poly[k] (p - b(x))**k + v(x)`` and the diffusion is ``a(x)``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# Dormand-Prince 5(4) tableau with Shampine's quartic continuous extension.
DP_C = np.array([0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0])
DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40, 9.0 / 40, 0.0, 0.0, 0.0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0.0, 0.0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0.0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656],
])
DP_B = np.array([35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84])
DP_E = np.array([-71.0 / 57600, 0.0, 71.0 / 16695, -71.0 / 1920, 17253.0 / 339200,
                 -22.0 / 525, 1.0 / 40])
DP_P = np.array([
    [1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608,
     -12715105075.0 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933,
     87487479700.0 / 32700410799],
    [0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304,
     -10690763975.0 / 1880347072],
    [0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408,
     701980252875.0 / 199316789632],
    [0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883,
     -1453857185.0 / 822651844],
    [0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423],
])

STATUS_REACHED_END = 0
STATUS_ESCAPED_ABOVE = 1
STATUS_ESCAPED_BELOW = 2
STATUS_STEP_UNDERFLOW = 3
STATUS_MAX_STEPS = 4


# --------------------------------------------------------------------------
# scalar evaluation
# --------------------------------------------------------------------------

@njit
def field_at(x, coef, trig, bumps):
    v = coef[0]
    for k in range(trig.shape[0]):
        v += trig[k, 0] * np.cos(trig[k, 1] * x + trig[k, 2])
    m = bumps.shape[1]
    if m > 0:
        w = coef[1]
        reach = 8.0 * w
        centers = bumps[1]
        lo = np.searchsorted(centers, x - reach)
        hi = np.searchsorted(centers, x + reach)
        for j in range(lo, hi):
            d = (x - centers[j]) / w
            v += bumps[0, j] * np.exp(-0.5 * d * d)
    return v


@njit
def poly_at(q, poly):
    s = 0.0
    for k in range(poly.shape[0] - 1, -1, -1):
        s = s * q + poly[k]
    return s


@njit
def dpoly_at(q, poly):
    s = 0.0
    for k in range(poly.shape[0] - 1, 0, -1):
        s = s * q + k * poly[k]
    return s


@njit
def ham_at(p, x, model):
    q = p - field_at(x, model[3], model[4], model[5])
    return poly_at(q, model[9]) + field_at(x, model[6], model[7], model[8])


@njit
def diff_at(x, model):
    return field_at(x, model[0], model[1], model[2])


@njit
def aux_rhs(x, f, lam, model):
    """Right-hand side of a(x) f' + H(f, x) = lam solved for f'."""
    return (lam - ham_at(f, x, model)) / diff_at(x, model)


# --------------------------------------------------------------------------
# array evaluation
# --------------------------------------------------------------------------

@njit
def _field_many_jit(xs, coef, trig, bumps):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = field_at(xs[i], coef, trig, bumps)
    return out


def _field_many_np(xs, coef, trig, bumps):
    xs = np.asarray(xs, dtype=float)
    out = np.full(xs.shape, coef[0], dtype=float)
    if trig.shape[0]:
        out += (trig[:, 0] * np.cos(np.multiply.outer(xs, trig[:, 1]) + trig[:, 2])).sum(axis=-1)
    m = bumps.shape[1]
    if m:
        w = coef[1]
        centers = bumps[1]
        lo = np.searchsorted(centers, xs - 8.0 * w)
        hi = np.searchsorted(centers, xs + 8.0 * w)
        width = int((hi - lo).max()) if xs.size else 0
        for k in range(width):
            idx = lo + k
            valid = idx < hi
            idx = np.minimum(idx, m - 1)
            d = (xs - centers[idx]) / w
            out += np.where(valid, bumps[0, idx] * np.exp(-0.5 * d * d), 0.0)
    return out


def field_many(xs, coef, trig, bumps):
    xs = np.ascontiguousarray(xs, dtype=float)
    if USE_NUMBA:
        return _field_many_jit(xs.ravel(), coef, trig, bumps).reshape(xs.shape)
    return _field_many_np(xs, coef, trig, bumps)


def ham_many(ps, xs, model):
    """Vectorised H(p, x); ``ps`` and ``xs`` broadcast against each other.

    The fields are evaluated once per distinct ``x`` before broadcasting.
    """
    ps = np.asarray(ps, dtype=float)
    xs = np.asarray(xs, dtype=float)
    q = ps - field_many(xs, model[3], model[4], model[5])
    return np.polynomial.polynomial.polyval(q, model[9]) + field_many(
        xs, model[6], model[7], model[8])


def dham_many(ps, xs, model):
    """Vectorised dH/dp."""
    ps = np.asarray(ps, dtype=float)
    xs = np.asarray(xs, dtype=float)
    q = ps - field_many(xs, model[3], model[4], model[5])
    dpoly = np.polynomial.polynomial.polyder(model[9]) if model[9].size > 1 else np.zeros(1)
    return np.polynomial.polynomial.polyval(q, dpoly)


# --------------------------------------------------------------------------
# Dormand-Prince integration of the auxiliary ODE
# --------------------------------------------------------------------------

@njit
def _dense_value(y0, h, q, sig):
    return y0 + h * sig * (q[0] + sig * (q[1] + sig * (q[2] + sig * q[3])))


@njit
def _grow1(arr, n):
    new = np.empty(2 * arr.shape[0])
    new[:n] = arr[:n]
    return new


@njit
def _grow2(arr, n):
    new = np.empty((2 * arr.shape[0], arr.shape[1]))
    new[:n] = arr[:n]
    return new


@njit
def _dp5_attempt(model, lam, x0, sgn, s, y, h, k):
    """One trial step from ``(s, y)``; ``k[0]`` holds the slope there.  Fills ``k[1:]``."""
    for i in range(1, 6):
        acc = y
        for j in range(i):
            acc += h * DP_A[i, j] * k[j]
        k[i] = sgn * aux_rhs(x0 + sgn * (s + DP_C[i] * h), acc, lam, model)
    y_new = y
    for j in range(6):
        y_new += h * DP_B[j] * k[j]
    k[6] = sgn * aux_rhs(x0 + sgn * (s + h), y_new, lam, model)
    err = 0.0
    for j in range(7):
        err += DP_E[j] * k[j]
    return y_new, abs(h * err)


@njit
def _initial_step(k0, y, rtol, atol, hmax, span):
    scale0 = atol + rtol * abs(y)
    h = 0.01 * scale0 ** 0.2 / max(abs(k0), 1e-8) ** 0.2
    return min(max(h, 1e-4), hmax, span)


@njit
def _grow_factor(en):
    if en == 0.0:
        return 5.0
    return min(5.0, 0.9 * en ** -0.2)


@njit
def dp5_integrate(model, lam, x0, f0, span, sgn, rtol, atol, esc, hmin, hmax, max_steps):
    """Integrate ``a f' + H(f, x) = lam`` along ``x = x0 + sgn * s``, ``s in [0, span]``.

    Returns ``(status, s_nodes, y_nodes, q_coef, s_event)``.  ``q_coef[i]`` holds
    the quartic dense-output coefficients of step ``i`` in the internal variable
    ``s``; ``s_event`` is where an escape through ``|f| = esc`` was located.
    """
    cap = 256
    s_nodes = np.empty(cap)
    y_nodes = np.empty(cap)
    q_coef = np.empty((cap, 4))
    s_nodes[0] = 0.0
    y_nodes[0] = f0
    n = 0
    status = STATUS_REACHED_END
    s_event = span

    s = 0.0
    y = f0
    if abs(y) > esc:
        status = STATUS_ESCAPED_ABOVE if y > 0 else STATUS_ESCAPED_BELOW
        return status, s_nodes[:1].copy(), y_nodes[:1].copy(), q_coef[:0].copy(), 0.0
    k = np.empty(7)
    k[0] = sgn * aux_rhs(x0, y, lam, model)
    h = _initial_step(k[0], y, rtol, atol, hmax, span)
    q = np.empty(4)

    while s < span:
        if n >= max_steps:
            status = STATUS_MAX_STEPS
            break
        last = False
        if s + h >= span:
            h = span - s
            last = True
        y_new, err = _dp5_attempt(model, lam, x0, sgn, s, y, h, k)
        en = err / (atol + rtol * max(abs(y), abs(y_new)))
        if not (np.isfinite(y_new) and np.isfinite(en)) or en > 1.0:
            if np.isfinite(en):
                h *= max(0.2, 0.9 * en ** -0.2)
            else:
                h *= 0.25
            if h < hmin:
                status = STATUS_STEP_UNDERFLOW
                break
            continue
        if n + 2 > s_nodes.shape[0]:
            s_nodes = _grow1(s_nodes, n + 1)
            y_nodes = _grow1(y_nodes, n + 1)
            q_coef = _grow2(q_coef, n)
        for c in range(4):
            acc = 0.0
            for r in range(7):
                acc += k[r] * DP_P[r, c]
            q[c] = acc
        q_coef[n] = q
        s_nodes[n + 1] = span if last else s + h
        y_nodes[n + 1] = y_new
        n += 1
        if abs(y_new) > esc:
            target = esc if y_new > 0 else -esc
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                v = _dense_value(y, h, q, mid)
                if (v - target) * (y - target) > 0.0:
                    lo = mid
                else:
                    hi = mid
            s_event = s + hi * h
            status = STATUS_ESCAPED_ABOVE if y_new > 0 else STATUS_ESCAPED_BELOW
            break
        s = s_nodes[n]
        y = y_new
        k[0] = k[6]
        h = min(h * _grow_factor(en), hmax)
    return status, s_nodes[:n + 1].copy(), y_nodes[:n + 1].copy(), q_coef[:n].copy(), s_event


@njit
def dp5_endpoint(model, lam, x0, f0, span, sgn, rtol, atol, esc, hmin, hmax, max_steps):
    """Like :func:`dp5_integrate` but keeps only ``(status, f at the end)``."""
    s = 0.0
    y = f0
    if abs(y) > esc:
        return (STATUS_ESCAPED_ABOVE if y > 0 else STATUS_ESCAPED_BELOW), y
    k = np.empty(7)
    k[0] = sgn * aux_rhs(x0, y, lam, model)
    h = _initial_step(k[0], y, rtol, atol, hmax, span)
    n = 0
    while s < span:
        if n >= max_steps:
            return STATUS_MAX_STEPS, y
        last = False
        if s + h >= span:
            h = span - s
            last = True
        y_new, err = _dp5_attempt(model, lam, x0, sgn, s, y, h, k)
        en = err / (atol + rtol * max(abs(y), abs(y_new)))
        if not (np.isfinite(y_new) and np.isfinite(en)) or en > 1.0:
            if np.isfinite(en):
                h *= max(0.2, 0.9 * en ** -0.2)
            else:
                h *= 0.25
            if h < hmin:
                return STATUS_STEP_UNDERFLOW, y
            continue
        n += 1
        if abs(y_new) > esc:
            return (STATUS_ESCAPED_ABOVE if y_new > 0 else STATUS_ESCAPED_BELOW), y_new
        s = span if last else s + h
        y = y_new
        k[0] = k[6]
        h = min(h * _grow_factor(en), hmax)
    return STATUS_REACHED_END, y


@njit
def displacement_scan(model, lam, p0s, x_start, span, sgn, rtol, atol, esc, hmin, hmax,
                      max_steps):
    """Period-map displacement ``f(end) - p0`` for many starts.

    Escapes give ``+inf``/``-inf``; integrator failures give ``nan``.
    """
    out = np.empty(p0s.shape[0])
    for i in range(p0s.shape[0]):
        status, y = dp5_endpoint(model, lam, x_start, p0s[i], span, sgn, rtol, atol, esc,
                                 hmin, hmax, max_steps)
        if status == STATUS_REACHED_END:
            out[i] = y - p0s[i]
        elif status == STATUS_ESCAPED_ABOVE:
            out[i] = np.inf
        elif status == STATUS_ESCAPED_BELOW:
            out[i] = -np.inf
        else:
            out[i] = np.nan
    return out


# --------------------------------------------------------------------------
# explicit monotone scheme for u_t = eps a u_xx + H(u_x, x)
# --------------------------------------------------------------------------

MODE_TILTED = 0
MODE_WIDE = 1


@njit
def hj_steps_jit(u, nsteps, dt, dx, eps, theta, a_i, b_i, v_i, poly, alpha,
                 mode, p_left, p_right, p_lo, p_hi):
    """Advance ``u`` in place by up to ``nsteps`` steps.

    Stops early (before touching ``u``) when a one-sided difference leaves
    ``[p_lo, p_hi]``.  Returns ``(steps_done, min_grad, max_grad)``.
    """
    n = u.shape[0]
    work = np.empty(n)
    gmin = np.inf
    gmax = -np.inf
    inv_dx = 1.0 / dx
    inv_dx2 = inv_dx * inv_dx
    for step in range(nsteps):
        smin = np.inf
        smax = -np.inf
        for i in range(n):
            if mode == MODE_TILTED:
                ul = u[i - 1] if i > 0 else u[n - 1]
                ur = u[i + 1] if i < n - 1 else u[0]
                pm = theta + (u[i] - ul) * inv_dx
                pp = theta + (ur - u[i]) * inv_dx
            else:
                if i > 0:
                    pm = (u[i] - u[i - 1]) * inv_dx
                else:
                    pm = p_left
                if i < n - 1:
                    pp = (u[i + 1] - u[i]) * inv_dx
                else:
                    pp = p_right
            if pp < smin:
                smin = pp
            if pp > smax:
                smax = pp
            if pm < smin:
                smin = pm
            if pm > smax:
                smax = pm
            pc = 0.5 * (pp + pm)
            h = poly_at(pc - b_i[i], poly) + v_i[i]
            work[i] = u[i] + dt * (eps * a_i[i] * (pp - pm) * inv_dx + h
                                   + 0.5 * alpha * (pp - pm))
        if smin < p_lo or smax > p_hi:
            return step, smin, smax
        for i in range(n):
            u[i] = work[i]
        if smin < gmin:
            gmin = smin
        if smax > gmax:
            gmax = smax
    return nsteps, gmin, gmax


def hj_steps_numpy(u, nsteps, dt, dx, eps, theta, a_i, b_i, v_i, poly, alpha,
                   mode, p_left, p_right, p_lo, p_hi):
    """Vectorised counterpart of :func:`hj_steps_jit` (same contract)."""
    gmin, gmax = np.inf, -np.inf
    for step in range(nsteps):
        if mode == MODE_TILTED:
            d = np.diff(u, append=u[0]) / dx
            pp = theta + d
            pm = theta + np.roll(d, 1)
        else:
            d = np.diff(u) / dx
            pp = np.append(d, p_right)
            pm = np.insert(d, 0, p_left)
        smin = min(pp.min(), pm.min())
        smax = max(pp.max(), pm.max())
        if smin < p_lo or smax > p_hi:
            return step, smin, smax
        h = np.polynomial.polynomial.polyval(0.5 * (pp + pm) - b_i, poly) + v_i
        u += dt * (eps * a_i * (pp - pm) / dx + h + 0.5 * alpha * (pp - pm))
        gmin = min(gmin, smin)
        gmax = max(gmax, smax)
    return nsteps, gmin, gmax


def hj_steps(*args):
    if USE_NUMBA:
        return hj_steps_jit(*args)
    return hj_steps_numpy(*args)
