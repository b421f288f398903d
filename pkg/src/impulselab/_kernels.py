"""Hot numeric loops.

Every function here is written in the numba-compatible subset so the same
source runs jitted (default) or as plain Python when numba is disabled.
Functions with a ``_np`` suffix are vectorised numpy counterparts used by the
fallback path where the loop is batch-parallel.
"""
import math

import numpy as np

from ._backend import njit

# function descriptor kinds
POLY = 0
OU = 1
TANH = 2
PWLIN = 3
TABLE = 4
CAPPED_LINEAR = 5
SATURATING = 6

# kernel ids
EPANECHNIKOV = 0
ORDER3 = 1

# advance() outcome codes
NO_HIT = 0
GRID_HIT = 1
BRIDGE_HIT = 2
BLOW_UP = -1

# exp(-37) < 2**-53: below the resolution of the uniforms, skip the exp
BRIDGE_CUTOFF = 37.0


@njit(cache=True)
def feval(kind, p, scale, x):
    """Evaluate a function descriptor at scalar ``x``.

    ``p`` packs all parameters; TABLE layout is ``[n, x_0..x_{n-1},
    y_0..y_{n-1}]`` (keeping everything in one array avoids per-call
    refcounting of extra array arguments inside hot loops).
    """
    if kind == POLY:
        v = 0.0
        for k in range(p.shape[0] - 1, -1, -1):
            v = v * x + p[k]
    elif kind == OU:
        v = -p[0] * (x - p[1])
    elif kind == TANH:
        v = -p[0] * math.tanh((x - p[2]) / p[1])
    elif kind == PWLIN:
        d = x - p[2]
        if d < 0.0:
            v = -p[0] * d
        else:
            v = -p[1] * d
    elif kind == TABLE:
        n = int(p[0])
        if x <= p[1]:
            v = p[1 + n]
        elif x >= p[n]:
            v = p[2 * n]
        else:
            lo = 0
            hi = n - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if p[1 + mid] <= x:
                    lo = mid
                else:
                    hi = mid
            w = (x - p[1 + lo]) / (p[1 + hi] - p[1 + lo])
            v = p[1 + n + lo] + w * (p[1 + n + hi] - p[1 + n + lo])
    elif kind == CAPPED_LINEAR:
        v = min(x, p[0]) - p[1]
    elif kind == SATURATING:
        v = p[2] * (1.0 - math.exp(-p[3] * (min(x, p[0]) - p[4]))) - p[1]
    else:
        v = math.nan
    return scale * v


@njit(cache=True)
def feval_array(kind, p, scale, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = feval(kind, p, scale, xs[i])
    return out


@njit(cache=True)
def em_fill(bk, bp, bsc, sk, sp, ssc, x, dt, z, out, start):
    """Euler-Maruyama from state ``x`` writing ``len(z)`` new states into
    ``out[start + 1:]``. Returns the index of the first non-finite state or -1."""
    sq = math.sqrt(dt)
    for i in range(z.shape[0]):
        b = feval(bk, bp, bsc, x)
        s = feval(sk, sp, ssc, x)
        x = x + b * dt + s * sq * z[i]
        if not math.isfinite(x):
            return start + i + 1
        out[start + i + 1] = x
    return -1


@njit(cache=True)
def advance(bk, bp, bsc, sk, sp, ssc,
            x, level, upward, dt, z, u, pos, n_max, bridge, rec, rec_pos):
    """Step the uncontrolled diffusion until it crosses ``level``.

    Consumes draws ``z[pos:]`` (and ``u[pos:]`` when ``bridge``) for at most
    ``n_max`` steps. A crossing counts when the new grid state is on or past
    the level, or (with ``bridge``) when a Brownian-bridge crossing between
    the two grid states is sampled. When ``rec`` is non-empty, the state at
    the start of each step is written to ``rec[rec_pos + k]``.

    Returns ``(steps, code, x)`` with code one of NO_HIT, GRID_HIT,
    BRIDGE_HIT, BLOW_UP.
    """
    sq = math.sqrt(dt)
    n = min(n_max, z.shape[0] - pos)
    record = rec.shape[0] > 0
    for k in range(n):
        if record:
            rec[rec_pos + k] = x
        s = feval(sk, sp, ssc, x)
        b = feval(bk, bp, bsc, x)
        xn = x + b * dt + s * sq * z[pos + k]
        if not math.isfinite(xn):
            return k + 1, BLOW_UP, x
        if upward:
            if xn >= level:
                return k + 1, GRID_HIT, xn
            d0 = level - x
            d1 = level - xn
        else:
            if xn <= level:
                return k + 1, GRID_HIT, xn
            d0 = x - level
            d1 = xn - level
        if bridge:
            s2 = s * s * dt
            if s2 > 0.0:
                a = 2.0 * d0 * d1 / s2
                if a < BRIDGE_CUTOFF and u[pos + k] < math.exp(-a):
                    return k + 1, BRIDGE_HIT, xn
        x = xn
    return n, NO_HIT, x


@njit(cache=True)
def advance_levels(bk, bp, bsc, sk, sp, ssc, x, levels, j, dt, z, u, pos, n_max, bridge,
                   out_steps, out_x, steps0):
    """Step upward through the increasing ``levels`` starting at index ``j``,
    writing the step count (offset by ``steps0``) and the pre-impulse state at
    each first passage.

    Every remaining level is tested against the same step: a grid state on or
    above it, or (with ``bridge``) ``u < exp(-2 d0 d1 / (s^2 dt))`` with the
    step's single uniform. The bridge maximum is monotone in that uniform, so
    several levels crossed inside one step get the joint law of the
    continuous path. With ``bridge`` the pre-impulse state is the level itself.

    Returns ``(steps, j, x, code)``; ``code`` is NO_HIT when the draws or
    ``n_max`` ran out (or all levels were passed) and BLOW_UP on a non-finite
    state.
    """
    sq = math.sqrt(dt)
    nl = levels.shape[0]
    n = min(n_max, z.shape[0] - pos)
    for k in range(n):
        if j >= nl:
            return k, j, x, NO_HIT
        s = feval(sk, sp, ssc, x)
        b = feval(bk, bp, bsc, x)
        xn = x + b * dt + s * sq * z[pos + k]
        if not math.isfinite(xn):
            return k + 1, j, x, BLOW_UP
        s2 = s * s * dt
        while j < nl:
            lev = levels[j]
            if xn >= lev:
                hit = True
            elif bridge and s2 > 0.0:
                a = 2.0 * (lev - x) * (lev - xn) / s2
                hit = a < BRIDGE_CUTOFF and u[pos + k] < math.exp(-a)
            else:
                hit = False
            if not hit:
                break
            out_steps[j] = steps0 + k + 1
            out_x[j] = lev if bridge else xn
            j += 1
        x = xn
    return n, j, x, NO_HIT


def advance_levels_np(bfun, sfun, x, j, levels, dt, z, u, width, bridge, out_steps, offset):
    """Lockstep numpy counterpart of :func:`advance_levels`.

    Row ``r`` is at state ``x[r]`` waiting for level ``levels[j[r]]`` and
    consumes column ``k`` of ``z[r]``/``u[r]`` at its ``k``-th step; all rows
    start at column 0. ``out_steps[r, i]`` receives ``offset + k + 1`` on the
    first passage above level ``i``. ``x`` and ``j`` are updated in place.
    Returns ``(row, column)`` of the first non-finite state, or ``None``.
    """
    sq = math.sqrt(dt)
    nl = levels.shape[0]
    for k in range(width):
        idx = np.flatnonzero(j < nl)
        if idx.size == 0:
            break
        xa = x[idx]
        s = sfun(xa)
        xn = xa + bfun(xa) * dt + s * sq * z[idx, k]
        bad = ~np.isfinite(xn)
        if np.any(bad):
            return int(idx[np.flatnonzero(bad)[0]]), k
        s2 = s * s * dt
        uk = u[idx, k] if bridge else None
        pend = np.arange(idx.size)
        while pend.size:
            rows = idx[pend]
            lv = levels[j[rows]]
            hit = xn[pend] >= lv
            if bridge:
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    a = 2.0 * (lv - xa[pend]) * (lv - xn[pend]) / s2[pend]
                    p = np.where((s2[pend] > 0.0) & (a < BRIDGE_CUTOFF), np.exp(-a), 0.0)
                hit |= uk[pend] < p
            pend = pend[hit]
            rows = idx[pend]
            out_steps[rows, j[rows]] = offset + k + 1
            j[rows] += 1
            pend = pend[j[idx[pend]] < nl]
        x[idx] = xn
    return None


@njit(cache=True)
def kde_sorted(xs, sv, w, h, kid):
    """Kernel sum ``sum_i w * Q((x - v_i)/h) / h`` over sorted values ``sv``."""
    out = np.empty(xs.shape[0])
    for j in range(xs.shape[0]):
        x = xs[j]
        lo = np.searchsorted(sv, x - 0.5 * h, side="left")
        hi = np.searchsorted(sv, x + 0.5 * h, side="right")
        acc = 0.0
        for i in range(lo, hi):
            acc += kernel_q(kid, (x - sv[i]) / h)
        out[j] = acc * w / h
    return out


@njit(cache=True)
def kde_cdf_sorted(xs, sv, w, h, kid):
    """``sum_i w * Qcdf((x - v_i)/h)`` over sorted values ``sv``."""
    out = np.empty(xs.shape[0])
    for j in range(xs.shape[0]):
        x = xs[j]
        lo = np.searchsorted(sv, x - 0.5 * h, side="left")
        hi = np.searchsorted(sv, x + 0.5 * h, side="right")
        acc = float(lo)
        for i in range(lo, hi):
            acc += kernel_cdf(kid, (x - sv[i]) / h)
        out[j] = acc * w
    return out


@njit(cache=True)
def kernel_q(kid, u):
    if u < -0.5 or u > 0.5:
        return 0.0
    u2 = u * u
    if kid == EPANECHNIKOV:
        return 1.5 * (1.0 - 4.0 * u2)
    return 2.8125 - 37.5 * u2 + 105.0 * u2 * u2


@njit(cache=True)
def kernel_cdf(kid, u):
    if u <= -0.5:
        return 0.0
    if u >= 0.5:
        return 1.0
    u2 = u * u
    if kid == EPANECHNIKOV:
        return 0.5 + 1.5 * u - 2.0 * u * u2
    return 0.5 + 2.8125 * u - 12.5 * u * u2 + 21.0 * u * u2 * u2


@njit(cache=True)
def kde_binned(xs, lo, width, mass, cum, h, kid, cdf):
    """Kernel sums over a linearly binned occupation measure.

    ``mass[k]`` sits at ``lo + k * width``. With ``cdf`` the smoothed
    distribution function is returned instead of the density; ``cum[k]`` is
    the mass of bins below ``k`` (mass left of the grid is the caller's
    business).
    """
    nb = mass.shape[0]
    out = np.empty(xs.shape[0])
    for j in range(xs.shape[0]):
        x = xs[j]
        k0 = int(math.floor((x - 0.5 * h - lo) / width))
        k1 = int(math.ceil((x + 0.5 * h - lo) / width))
        if k0 < 0:
            k0 = 0
        if k1 > nb - 1:
            k1 = nb - 1
        acc = 0.0
        if cdf:
            acc = cum[k0]
            for k in range(k0, k1 + 1):
                acc += mass[k] * kernel_cdf(kid, (x - lo - k * width) / h)
            out[j] = acc
        else:
            for k in range(k0, k1 + 1):
                acc += mass[k] * kernel_q(kid, (x - lo - k * width) / h)
            out[j] = acc / h
    return out


@njit(cache=True)
def linear_bin(values, lo, width, mass, weight):
    """Add ``weight`` per value to ``mass`` by linear binning.

    Values left of the grid are returned as their total weight; values right
    of it are dropped (callers size the grid so that only the lower tail can
    matter).
    """
    below = 0.0
    nb = mass.shape[0]
    for i in range(values.shape[0]):
        t = (values[i] - lo) / width
        if t < 0.0:
            below += weight
            continue
        k = int(math.floor(t))
        if k >= nb - 1:
            if k == nb - 1 and t == nb - 1:
                mass[nb - 1] += weight
            continue
        f = t - k
        mass[k] += weight * (1.0 - f)
        mass[k + 1] += weight * f
    return below
