"""Invariant density estimators from a continuous record, the plug-in
first-passage function and the estimated threshold.

The kernel estimator is the occupation-time average
``(1/(T h)) int_0^T Q((x - X_u)/h) du`` evaluated as a left-endpoint Riemann
sum over the sampled path; the local-time estimator replaces the local time at
``x`` by an ``eps``-band occupation integral.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from . import _kernels as K
from ._backend import USE_NUMBA
from .problem import threshold_grid, DEFAULT_GRID_N

DEFAULT_A = 1e-3
BANDWIDTH_EXPONENT = -0.5
XI_MAX_STEP = 0.0025


def default_bandwidth(T):
    """Default bandwidth ``h = T^(-1/2)``."""
    return float(T) ** BANDWIDTH_EXPONENT


class BandwidthResolutionWarning(UserWarning):
    """Bandwidth (or band width) too small for the sampling step."""


class KernelSpecError(ValueError):
    pass


# kernels ----------------------------------------------------------------

def _epan(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 0.5, 1.5 * (1.0 - 4.0 * u * u), 0.0)


def _epan_cdf(u):
    u = np.clip(np.asarray(u, dtype=float), -0.5, 0.5)
    return 0.5 + 1.5 * u - 2.0 * u**3


def _order3(u):
    u = np.asarray(u, dtype=float)
    u2 = u * u
    return np.where(np.abs(u) <= 0.5, 2.8125 - 37.5 * u2 + 105.0 * u2 * u2, 0.0)


def _order3_cdf(u):
    u = np.clip(np.asarray(u, dtype=float), -0.5, 0.5)
    return 0.5 + 2.8125 * u - 12.5 * u**3 + 21.0 * u**5


class KernelSpec:
    """Smoothing kernel supported on ``[-1/2, 1/2]``.

    Construction checks symmetry, support, the moment conditions up to
    ``order`` and a Lipschitz bound on a check grid, raising
    :class:`KernelSpecError` on failure.
    """

    def __init__(self, name, q, order, cdf=None, kernel_id=-1, tol=1e-8, lipschitz=None):
        self.name = name
        self.q = q
        self.order = int(order)
        self.kernel_id = int(kernel_id)
        self.tol = float(tol)
        self._cdf = cdf
        self.lipschitz = self._check(lipschitz)

    def _check(self, lip_bound):
        tol = self.tol
        u = np.linspace(-0.5, 0.5, 20001)
        qu = np.asarray(self.q(u), dtype=float)
        if not np.all(np.isfinite(qu)):
            raise KernelSpecError(f"{self.name}: kernel is not finite on [-1/2, 1/2]")
        if np.max(np.abs(qu - self.q(-u))) > tol:
            raise KernelSpecError(f"{self.name}: kernel is not symmetric")
        outside = np.concatenate([np.linspace(-3.0, -0.5, 2001)[:-1], np.linspace(0.5, 3.0, 2001)[1:]])
        if np.max(np.abs(self.q(outside))) > tol:
            raise KernelSpecError(f"{self.name}: support exceeds [-1/2, 1/2]")
        h = u[1] - u[0]
        for j in range(self.order + 1):
            mom = float(np.sum((u[1:] ** j * qu[1:] + u[:-1] ** j * qu[:-1]) * 0.5 * h))
            # refine with Simpson on the same grid
            w = np.ones_like(u)
            w[1:-1:2], w[2:-1:2] = 4.0, 2.0
            mom = float(np.sum(w * u**j * qu) * h / 3.0)
            target = 1.0 if j == 0 else 0.0
            if abs(mom - target) > max(tol, 1e-10):
                raise KernelSpecError(f"{self.name}: moment {j} is {mom:.3g}, expected {target}")
        slopes = np.abs(np.diff(np.asarray(self.q(np.linspace(-0.6, 0.6, 24001)))))
        lip = float(slopes.max() / (1.2 / 24000))
        if lip_bound is not None and lip > lip_bound:
            raise KernelSpecError(f"{self.name}: Lipschitz constant {lip:.3g} exceeds {lip_bound}")
        if not np.isfinite(lip) or lip > 1e6:
            raise KernelSpecError(f"{self.name}: kernel is not Lipschitz on the check grid")
        return lip

    def cdf(self, u):
        if self._cdf is not None:
            return self._cdf(u)
        u = np.clip(np.asarray(u, dtype=float), -0.5, 0.5)
        grid = np.linspace(-0.5, 0.5, 4001)
        cum = cumulative_simpson(np.asarray(self.q(grid)), x=grid, initial=0.0)
        return np.interp(u, grid, cum)

    def __repr__(self):
        return f"KernelSpec({self.name!r}, order={self.order})"


EPANECHNIKOV = KernelSpec("epanechnikov", _epan, 1, _epan_cdf, K.EPANECHNIKOV)
ORDER3 = KernelSpec("order3", _order3, 3, _order3_cdf, K.ORDER3)
KERNELS = {"epanechnikov": EPANECHNIKOV, "order3": ORDER3}


def get_kernel(kernel):
    if isinstance(kernel, KernelSpec):
        return kernel
    try:
        return KERNELS[kernel]
    except KeyError:
        raise KernelSpecError(f"unknown kernel {kernel!r}") from None


# density estimates --------------------------------------------------------

class DensityEstimate:
    """Evaluable density estimate with its smoothed distribution function."""

    kind = ""
    T = math.nan

    def __call__(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError


def _path_record(path):
    if path.values.size < 2:
        raise ValueError("the path must cover a positive duration")
    return np.sort(path.values[:-1])


def _window_sums_np(xs, sv, h, fn):
    out = np.empty(xs.size)
    lo = np.searchsorted(sv, xs - 0.5 * h, side="left")
    hi = np.searchsorted(sv, xs + 0.5 * h, side="right")
    for j in range(xs.size):
        out[j] = fn((xs[j] - sv[lo[j]:hi[j]]) / h).sum()
    return out, lo


class KernelDensityEstimate(DensityEstimate):
    """Kernel estimator from a sampled path (left-endpoint Riemann sum)."""

    kind = "kernel"

    def __init__(self, path, kernel, h):
        if not h > 0:
            raise ValueError("bandwidth must be positive")
        if h < 2.0 * path.dt:
            warnings.warn(f"bandwidth {h:g} is below 2*dt={2 * path.dt:g}; the estimate is "
                          "dominated by discretisation", BandwidthResolutionWarning, stacklevel=3)
        self.kernel = get_kernel(kernel)
        self.h = float(h)
        self.T = path.T
        self.dt = path.dt
        self._sv = _path_record(path)
        self._w = path.dt / self.T

    def __call__(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        if USE_NUMBA and self.kernel.kernel_id >= 0:
            out = K.kde_sorted(xs, self._sv, self._w, self.h, self.kernel.kernel_id)
        else:
            s, _ = _window_sums_np(xs, self._sv, self.h, self.kernel.q)
            out = s * self._w / self.h
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    def cdf(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        if USE_NUMBA and self.kernel.kernel_id >= 0:
            out = K.kde_cdf_sorted(xs, self._sv, self._w, self.h, self.kernel.kernel_id)
        else:
            s, lo = _window_sums_np(xs, self._sv, self.h, self.kernel.cdf)
            out = (s + lo) * self._w
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


class LocalTimeDensityEstimate(DensityEstimate):
    """``L_T^x / (T sigma^2(x))`` with the local time approximated by
    ``(1/eps) sum_i 1{x <= X_i <= x + eps} sigma^2(X_i) dt``."""

    kind = "local_time"

    def __init__(self, path, eps, sigma):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.sigma = sigma
        sv = _path_record(path)
        s2 = np.asarray(sigma(sv), dtype=float) ** 2
        if eps < 2.0 * path.dt * float(np.sqrt(s2.max())):
            warnings.warn(f"band eps={eps:g} is below 2*dt*sigma_max", BandwidthResolutionWarning,
                          stacklevel=3)
        self.eps = float(eps)
        self.T = path.T
        self.dt = path.dt
        self._sv = sv
        self._cs2 = np.concatenate([[0.0], np.cumsum(s2)])
        self._cx = np.concatenate([[0.0], np.cumsum(sv)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo = np.searchsorted(self._sv, x, side="left")
        hi = np.searchsorted(self._sv, x + self.eps, side="right")
        occ = (self._cs2[hi] - self._cs2[lo]) * self.dt / self.eps
        out = occ / (self.T * np.asarray(self.sigma(x)) ** 2)
        return out if out.ndim else float(out)

    def cdf(self, x):
        # exact for constant sigma: integral of the band indicator in x
        x = np.asarray(x, dtype=float)
        below = np.searchsorted(self._sv, x, side="right")
        top = np.searchsorted(self._sv, x + self.eps, side="right")
        part = ((top - below) * (x + self.eps) - (self._cx[top] - self._cx[below])) / self.eps
        out = (below + part) * self.dt / self.T
        return out if out.ndim else float(out)


class OccupationHistogram:
    """Linearly binned occupation measure of a growing record.

    Used by the data-driven strategy: appending exploration segments is cheap
    and kernel estimates with any bandwidth up to ``margin`` are evaluated on
    ``[lo + margin, hi - margin]`` from the bins. Mass left of ``lo`` is kept
    as a single number (it only enters distribution functions).
    """

    def __init__(self, lo, hi, width=1e-4, margin=2.0):
        self.lo = float(lo)
        self.width = float(width)
        self.margin = float(margin)
        self.nb = int(math.ceil((hi - lo) / width)) + 1
        self.mass = np.zeros(self.nb)
        self.below = 0.0
        self.total_time = 0.0

    def add(self, values, dt):
        values = np.ascontiguousarray(values, dtype=float)
        if values.size == 0:
            return
        if USE_NUMBA:
            self.below += K.linear_bin(values, self.lo, self.width, self.mass, float(dt))
        else:
            t = (values - self.lo) / self.width
            left = t < 0.0
            self.below += dt * np.count_nonzero(left)
            t = t[~left]
            k = np.floor(t).astype(np.int64)
            keep = k < self.nb - 1
            edge = (k == self.nb - 1) & (t == self.nb - 1)
            f = t[keep] - k[keep]
            np.add.at(self.mass, k[keep], dt * (1.0 - f))
            np.add.at(self.mass, k[keep] + 1, dt * f)
            self.mass[self.nb - 1] += dt * np.count_nonzero(edge)
        self.total_time += dt * values.size

    def estimate(self, kernel, h):
        if self.total_time <= 0:
            raise ValueError("no occupation recorded yet")
        if h > self.margin:
            raise ValueError(f"bandwidth {h:g} exceeds the histogram margin {self.margin:g}")
        return BinnedKernelDensity(self, get_kernel(kernel), h)


class BinnedKernelDensity(DensityEstimate):
    kind = "kernel"

    def __init__(self, hist, kernel, h):
        if kernel.kernel_id < 0:
            raise KernelSpecError("binned estimates need a builtin kernel")
        self.kernel = kernel
        self.h = float(h)
        self.T = hist.total_time
        self._lo, self._w = hist.lo, hist.width
        self._mass = hist.mass / self.T
        self._cum = np.concatenate([[0.0], np.cumsum(self._mass)])
        self._below = hist.below / self.T

    def _eval(self, x, cdf):
        xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        if USE_NUMBA:
            out = K.kde_binned(xs, self._lo, self._w, self._mass, self._cum, self.h,
                               self.kernel.kernel_id, cdf)
        else:
            out = np.empty(xs.size)
            nb = self._mass.size
            for j, xv in enumerate(xs):
                k0 = max(0, int(math.floor((xv - 0.5 * self.h - self._lo) / self._w)))
                k1 = min(nb - 1, int(math.ceil((xv + 0.5 * self.h - self._lo) / self._w)))
                u = (xv - self._lo - np.arange(k0, k1 + 1) * self._w) / self.h
                m = self._mass[k0:k1 + 1]
                if cdf:
                    out[j] = self._cum[k0] + np.sum(m * self.kernel.cdf(u))
                else:
                    out[j] = np.sum(m * self.kernel.q(u)) / self.h
        if cdf:
            out = out + self._below
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    def __call__(self, x):
        return self._eval(x, False)

    def cdf(self, x):
        return self._eval(x, True)


class ExactDensity(DensityEstimate):
    """Wraps an :class:`InvariantDensityOracle` as a density estimate."""

    kind = "exact"

    def __init__(self, oracle):
        self.oracle = oracle

    def __call__(self, x):
        return self.oracle.density(x)

    def cdf(self, x):
        return self.oracle.cdf(x)


def kernel_density_estimate(path, kernel, h, x):
    return KernelDensityEstimate(path, kernel, h)(x)


def local_time_density_estimate(path, eps, sigma, x):
    return LocalTimeDensityEstimate(path, eps, sigma)(x)


def default_eps(dt, sigma_upper):
    return max(2.0 * dt * sigma_upper**2, math.sqrt(dt))


# plug-in xi ---------------------------------------------------------------

def _refine(anchors, max_step, first_panels=16):
    """Sorted nodes containing every anchor with spacing at most ``max_step``.

    The first interval gets at least ``first_panels`` panels: xi vanishes
    quadratically at y0, so relative accuracy there needs a finer step.
    """
    pieces = [anchors[:1]]
    for i, (a, b) in enumerate(zip(anchors[:-1], anchors[1:])):
        k = max(first_panels if i == 0 else 1, int(math.ceil((b - a) / max_step)))
        pieces.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(pieces)


@dataclass(frozen=True, eq=False)
class XiEstimate:
    """Plug-in ``x -> max{M1, 2 int_{y0}^x I(y) / ((rho(y) v a) sigma^2(y)) dy}``.

    ``I(y)`` is ``int_{y0}^y rho`` (``inner="y0"``) or ``int_{-inf}^y rho``
    taken from the estimate's distribution function (``inner="full"``).
    Integrals are nested composite Simpson on nodes that contain every
    evaluation point.
    """

    source: DensityEstimate
    sigma: object
    y0: float
    a: float
    M1: float
    inner: str = "y0"
    max_step: float = XI_MAX_STEP

    def raw(self, x):
        """The integral without the ``M1`` floor."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        if np.any(flat < self.y0):
            raise ValueError("xi estimate is only defined for x >= y0")
        pts, inv = np.unique(flat, return_inverse=True)
        anchors = np.concatenate([[self.y0], pts[pts > self.y0]])
        if anchors.size == 1:
            out = np.zeros(flat.size)
            return out.reshape(x.shape) if x.ndim else 0.0
        nodes = _refine(anchors, self.max_step)
        rho = np.asarray(self.source(nodes), dtype=float)
        if self.inner == "y0":
            inner = cumulative_simpson(rho, x=nodes, initial=0.0)
        elif self.inner == "full":
            inner = np.asarray(self.source.cdf(nodes), dtype=float)
        else:
            raise ValueError("inner must be 'y0' or 'full'")
        denom = np.maximum(rho, self.a) * np.asarray(self.sigma(nodes), dtype=float) ** 2
        outer = cumulative_simpson(2.0 * inner / denom, x=nodes, initial=0.0)
        at = np.searchsorted(nodes, pts)
        vals = np.where(pts > self.y0, outer[np.minimum(at, nodes.size - 1)], 0.0)
        out = vals[inv]
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def __call__(self, x):
        out = np.maximum(self.M1, self.raw(x))
        return out if np.ndim(out) else float(out)


def build_xi_estimate(density, sigma, y0, a=DEFAULT_A, M1=None, inner="y0"):
    if not a > 0:
        raise ValueError("density floor a must be positive")
    if M1 is None or not M1 > 0:
        raise ValueError("M1 must be positive")
    if inner not in ("y0", "full"):
        raise ValueError("inner must be 'y0' or 'full'")
    return XiEstimate(density, sigma, float(y0), float(a), float(M1), inner)


def threshold_profile(xi_hat, reward, grid_n=DEFAULT_GRID_N):
    ys = threshold_grid(reward, grid_n)
    xi = np.asarray(xi_hat(ys))
    return ys, xi, reward.g(ys) / xi


def estimate_threshold(xi_hat, reward, grid_n=DEFAULT_GRID_N):
    """Grid argmax of ``g / xi_hat`` on ``[y1, beta]`` (smallest on ties)."""
    ys, _, prof = threshold_profile(xi_hat, reward, grid_n)
    i = int(np.argmax(prof))
    return float(ys[i]), float(prof[i])
