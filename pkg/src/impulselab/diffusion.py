"""Scalar ergodic diffusions: models, exact oracles for the invariant density
and the expected first-passage time, and Euler-Maruyama simulation."""
import csv
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import integrate

from . import _kernels as K
from ._backend import USE_NUMBA
from .functions import FunctionSpec
from .quadrature import CumulativeIntegral, simpson
from .rng import NoiseStream, derive_seed

DEFAULT_DT = 1e-3
MAGIC = b"IMPL1"
_HEADER = struct.Struct("<5sddQQ")


class InvalidModelError(ValueError):
    """A drift or diffusion descriptor produced a non-finite value."""


class OracleError(RuntimeError):
    """Quadrature for the density or first-passage oracle failed."""


class SimulationBlowUp(RuntimeError):
    def __init__(self, last_finite_index, message=None):
        self.last_finite_index = int(last_finite_index)
        super().__init__(message or f"non-finite state after index {last_finite_index}")


@dataclass(frozen=True)
class DriftClassParams:
    """Constants of the drift class: linear growth ``C``, recurrence radius
    ``A`` and strength ``gamma``, and bounds on ``|sigma|``."""

    lin_growth_C: float = 1.0
    recurrence_A: float = 1.0
    recurrence_gamma: float = 0.5
    sigma_lower: float = 1.0
    sigma_upper: float = 1.0

    def __post_init__(self):
        if not self.lin_growth_C >= 1.0:
            raise ValueError("lin_growth_C must be >= 1")
        if not (self.recurrence_A > 0 and self.recurrence_gamma > 0):
            raise ValueError("recurrence_A and recurrence_gamma must be positive")
        if not (0 < self.sigma_lower <= self.sigma_upper < math.inf):
            raise ValueError("need 0 < sigma_lower <= sigma_upper < inf")


@dataclass(frozen=True)
class DiffusionModel:
    """``dX = b(X) dt + sigma(X) dW`` with class constants for validation."""

    drift: FunctionSpec
    sigma: FunctionSpec
    class_params: DriftClassParams = DriftClassParams()
    name: str = ""

    @classmethod
    def ou(cls, theta=1.0, sigma=1.0, mu=0.0, class_params=None):
        if class_params is None:
            class_params = DriftClassParams(
                max(1.0, theta * (1.0 + abs(mu))), 1.0 + abs(mu),
                0.5 * theta / sigma**2, sigma, sigma)
        return cls(FunctionSpec.ou(theta, mu), FunctionSpec.constant(sigma), class_params, "ou")

    def b(self, x):
        return self.drift(x)

    def sig(self, x):
        return self.sigma(x)

    def kernel_args(self):
        return self.drift.packed + self.sigma.packed

    def to_dict(self):
        cp = self.class_params
        return {
            "name": self.name,
            "drift": self.drift.to_dict(),
            "sigma": self.sigma.to_dict(),
            "class_params": {
                "C": cp.lin_growth_C, "A": cp.recurrence_A, "gamma": cp.recurrence_gamma,
                "sigma_lower": cp.sigma_lower, "sigma_upper": cp.sigma_upper,
            },
        }

    @cached_property
    def oracle(self):
        return InvariantDensityOracle(self)

    def __getstate__(self):
        # the cached oracle holds closures; worker processes rebuild it
        state = dict(self.__dict__)
        state.pop("oracle", None)
        return state


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violation: str = ""
    x: float = math.nan

    def __bool__(self):
        return self.passed


def validate_class_membership(model, grid):
    """Pointwise check of the drift-class conditions on ``grid``.

    Returns a :class:`ValidationReport` naming the first violating grid point
    in the order given.
    """
    grid = np.asarray(grid, dtype=float)
    cp = model.class_params
    if grid.size == 0:
        raise ValueError("validation grid is empty")
    if not (grid.min() < -cp.recurrence_A and grid.max() > cp.recurrence_A):
        raise ValueError("validation grid must cover [-R, R] with R > recurrence_A")
    b = np.asarray(model.b(grid), dtype=float)
    s = np.abs(np.asarray(model.sig(grid), dtype=float))
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
        raise InvalidModelError("drift or sigma is not finite on the validation grid")
    with np.errstate(divide="ignore", invalid="ignore"):
        recur = b / s**2 * np.sign(grid)
    checks = [
        (np.abs(b) > cp.lin_growth_C * (1.0 + np.abs(grid)), "linear growth |b(x)| <= C(1+|x|)"),
        ((s < cp.sigma_lower) | (s > cp.sigma_upper), "sigma bounds"),
        ((np.abs(grid) > cp.recurrence_A) & ~(recur <= -cp.recurrence_gamma),
         "recurrence b/sigma^2 sgn(x) <= -gamma"),
    ]
    first = None
    for bad, what in checks:
        idx = np.flatnonzero(bad)
        if idx.size and (first is None or idx[0] < first[0]):
            first = (idx[0], what)
    if first is None:
        return ValidationReport(True)
    return ValidationReport(False, first[1], float(grid[first[0]]))


class InvariantDensityOracle:
    """Exact (quadrature) invariant density, its distribution function and the
    expected first-passage time for a model of the class.

    The unnormalised density ``exp(U)/sigma^2`` with
    ``U(x) = int_0^x 2b/sigma^2`` is integrated by composite Simpson over
    ``[-trunc_bound, trunc_bound]``. The default bound makes the class tail
    estimate ``exp(-2 gamma (R - A))`` smaller than ``1e-12``.
    """

    def __init__(self, model, trunc_bound=None, quad_points=16385, quad_tol=1e-8):
        cp = model.class_params
        if trunc_bound is None:
            trunc_bound = cp.recurrence_A + math.log(1e12) / (2.0 * cp.recurrence_gamma)
        if quad_points % 2 == 0:
            quad_points += 1
        self.model = model
        self.trunc_bound = float(trunc_bound)
        self.quad_points = int(quad_points)
        self.quad_tol = float(quad_tol)
        R = self.trunc_bound

        def slope(x):
            return 2.0 * model.b(x) / model.sig(x) ** 2

        self._slope = slope
        with np.errstate(all="ignore"):
            self._U = CumulativeIntegral(slope, -R, R, self.quad_points - 1)
            if not np.all(np.isfinite(self._U.cum)):
                raise OracleError("drift potential is not finite on the quadrature grid")
            self._U0 = float(self._U(0.0))
            u_nodes = self._U.cum - self._U0
            self._umax = float(u_nodes.max())
            unnorm = np.exp(u_nodes - self._umax) / model.sig(self._U.nodes) ** 2
        h = self._U.h
        full = simpson(unnorm, h)
        half = simpson(unnorm[::2], 2 * h)
        if not (np.isfinite(full) and full > 0):
            raise OracleError("normalising constant is not finite")
        if abs(full - half) > quad_tol * full:
            raise OracleError(
                f"normalising constant not converged: {full!r} vs {half!r} on the coarse grid")
        self._cs = full
        # C_{b,sigma} in the unshifted convention
        self.norm_constant = float(full * math.exp(self._umax))
        self._rho_nodes = unnorm / full
        self._cdf = CumulativeIntegral(self.density, -R, R, self.quad_points - 1,
                                       values=self._rho_nodes)
        self._xi_cache = {}

    # density ----------------------------------------------------------
    def potential(self, x):
        """``U(x) = int_0^x 2 b / sigma^2``; quadrature beyond the grid."""
        x = np.asarray(x, dtype=float)
        R = self.trunc_bound
        inside = np.abs(x) <= R
        out = np.empty_like(x)
        if inside.all():
            out = np.asarray(self._U(x)) - self._U0
        else:
            out[inside] = np.asarray(self._U(x[inside])) - self._U0
            for i in np.flatnonzero(~inside):
                edge = math.copysign(R, x.flat[i])
                extra = integrate.quad(lambda y: float(self._slope(y)), edge, x.flat[i], limit=200)[0]
                out.flat[i] = float(self._U(edge)) - self._U0 + extra
        return out if out.ndim else float(out)

    def density(self, x):
        """Normalised invariant density (non-negative everywhere)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", under="ignore"):
            out = np.exp(self.potential(x) - self._umax) / (self._cs * self.model.sig(x) ** 2)
        return out if np.ndim(out) else float(out)

    __call__ = density

    def cdf(self, x):
        """``int_{-inf}^x rho`` (mass below ``-trunc_bound`` neglected)."""
        x = np.asarray(x, dtype=float)
        R = self.trunc_bound
        out = np.asarray(self._cdf(np.clip(x, -R, R)), dtype=float)
        out = np.where(x >= R, 1.0, np.where(x <= -R, 0.0, out))
        return out if out.ndim else float(out)

    def total_mass(self):
        return float(simpson(self._rho_nodes, self._U.h))

    def min_density(self, lo, hi, n=2001):
        return float(np.min(self.density(np.linspace(lo, hi, n))))

    def tail_violations(self, n=200):
        """Points beyond ``A`` where ``sigma^2 rho`` decays slower than
        ``exp(-2 gamma (|x| - A))`` relative to its value at ``+-A``."""
        cp = self.model.class_params
        A, g = cp.recurrence_A, cp.recurrence_gamma
        bad = []
        for sgn in (1.0, -1.0):
            xs = sgn * np.linspace(A, self.trunc_bound, n)
            u = self.potential(xs)
            lhs = u - u[0]
            rhs = -2.0 * g * (np.abs(xs) - A)
            bad.extend(xs[lhs > rhs + 1e-9].tolist())
        return bad

    # first passage ----------------------------------------------------
    def _xi_integrand(self, y0, inner):
        lower = float(self.cdf(y0)) if inner == "y0" else 0.0

        def f(y):
            # F(y) / (sigma^2 rho) = F(y) * C * exp(-U(y)), done in shifted logs
            F = np.asarray(self.cdf(y)) - lower
            with np.errstate(over="ignore"):
                return 2.0 * F * self._cs * np.exp(self._umax - self.potential(y))
        return f

    def xi(self, y0, x, inner="full"):
        """Expected time to reach ``x`` from ``y0`` (nested quadrature).

        ``inner="y0"`` replaces the inner lower limit ``-inf`` by ``y0``.
        """
        x = np.asarray(x, dtype=float)
        if np.any(x < y0):
            raise ValueError("xi is only defined for x >= y0")
        if inner not in ("full", "y0"):
            raise ValueError("inner must be 'full' or 'y0'")
        xmax = float(x.max()) if x.size else y0
        if xmax == y0:
            out = np.zeros_like(x)
            return out if out.ndim else 0.0
        key = (float(y0), inner)
        ci = self._xi_cache.get(key)
        if ci is None or ci.b < xmax:
            span = xmax - y0
            n = max(64, int(math.ceil(span / 0.0025)))
            ci = CumulativeIntegral(self._xi_integrand(float(y0), inner), y0, xmax, n)
            if not np.all(np.isfinite(ci.cum)):
                raise OracleError("first-passage quadrature is not finite")
            self._xi_cache[key] = ci
        out = np.asarray(ci(x), dtype=float)
        return out if out.ndim else float(out)


def invariant_density(oracle, x):
    return oracle.density(x)


def xi_oracle(oracle, y0, x):
    return oracle.xi(y0, x)


# sample paths -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SamplePath:
    """Uniformly sampled trajectory ``values[i] = X(t0 + i dt)``."""

    t0: float
    dt: float
    values: np.ndarray
    seed: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("a sample path needs at least one state")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def T(self):
        return self.dt * (self.values.size - 1)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.values.size)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return (isinstance(other, SamplePath) and self.t0 == other.t0 and self.dt == other.dt
                and self.seed == other.seed and np.array_equal(self.values, other.values))

    def to_bytes(self):
        head = _HEADER.pack(MAGIC, float(self.t0), float(self.dt), self.values.size,
                            int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        return head + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size:
            raise ValueError("truncated sample path header")
        magic, t0, dt, n, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if body.size != n:
            raise ValueError(f"expected {n} states, found {body.size}")
        return cls(t0, dt, body.astype(float), seed)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"])
            for t, x in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(x))])

    @classmethod
    def read_csv(cls, path, seed=0):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, x = data[:, 0], data[:, 1]
        dt = float(t[1] - t[0]) if t.size > 1 else 1.0
        return cls(float(t[0]), dt, x, seed)

    def save(self, path):
        path = Path(path)
        if path.suffix.lower() == ".csv":
            self.write_csv(path)
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.suffix.lower() == ".csv":
            return cls.read_csv(path)
        return cls.from_bytes(path.read_bytes())


def n_steps_for(T, dt):
    # guard against T/dt landing a hair below an integer
    return int(math.floor(T / dt + 1e-9))


def simulate_path(model, x0, T, dt=DEFAULT_DT, seed=0):
    """Euler-Maruyama trajectory with ``floor(T/dt) + 1`` states."""
    if not (T > 0 and dt > 0 and dt <= T):
        raise ValueError("need T > 0, dt > 0 and dt <= T")
    n = n_steps_for(T, dt)
    out = np.empty(n + 1)
    out[0] = x0
    stream = NoiseStream(seed, uniforms=False)
    args = model.kernel_args()
    done = 0
    x = float(x0)
    while done < n:
        pos = stream.pos
        take = min(n - done, stream.block - pos)
        bad = K.em_fill(*args, x, dt, stream.z[pos:pos + take], out, done)
        if bad >= 0:
            raise SimulationBlowUp(bad - 1)
        stream.advance(take)
        done += take
        x = out[done]
    return SamplePath(0.0, dt, out, seed)


class Stepper:
    """Drives :func:`_kernels.advance` over a noise stream, optionally
    recording visited states."""

    def __init__(self, model, dt, stream, bridge=True):
        self.args = model.kernel_args()
        self.dt = float(dt)
        self.stream = stream
        self.bridge = bool(bridge)

    def run(self, x, level, upward, max_steps, record=None):
        """Advance from ``x`` until ``level`` is crossed or ``max_steps``.

        Returns ``(steps, code, x_end)``; ``record`` (a list) receives the
        pre-step states as arrays.
        """
        total = 0
        empty = np.empty(0)
        while total < max_steps:
            pos = self.stream.pos
            room = min(max_steps - total, self.stream.block - pos)
            rec = np.empty(room) if record is not None else empty
            steps, code, x = K.advance(*self.args, float(x), float(level), bool(upward), self.dt,
                                       self.stream.z, self.stream.u, pos, room, self.bridge, rec, 0)
            self.stream.advance(steps)
            if record is not None:
                record.append(rec[:steps])
            total += steps
            if code == K.BLOW_UP:
                raise SimulationBlowUp(total - 1)
            if code != K.NO_HIT:
                return total, code, x
        return total, K.NO_HIT, x


def _default_t_cap(model, x0, level):
    try:
        return 10.0 * float(model.oracle.xi(x0, level))
    except (OracleError, ValueError, FloatingPointError) as exc:
        raise ValueError("t_cap is required when the first-passage oracle is unavailable") from exc


def first_hitting_time(model, x0, level, dt=DEFAULT_DT, seed=0, t_cap=None, bridge=True):
    """First time the simulated path reaches ``level`` from ``x0 < level``.

    Returns ``(time, hit)``; ``time`` is ``t_cap`` when the level is not
    reached. With ``bridge`` a crossing between grid points is detected by
    sampling the Brownian-bridge crossing probability.
    """
    if not level > x0:
        raise ValueError("first_hitting_time needs level > x0")
    if t_cap is None:
        t_cap = _default_t_cap(model, x0, level)
    if not t_cap > 0:
        raise ValueError("t_cap must be positive")
    stepper = Stepper(model, dt, NoiseStream(seed, block=1 << 13), bridge)
    cap = n_steps_for(t_cap, dt)
    steps, code, _ = stepper.run(x0, level, True, cap)
    if code == K.NO_HIT:
        return float(t_cap), False
    return steps * dt, True


def first_passage_times(model, x0, levels, n_reps, dt=DEFAULT_DT, seed=0, t_cap=None,
                        bridge=True, batch=256):
    """First-passage times to each of the increasing ``levels`` for
    ``n_reps`` independent replications from ``x0``.

    Replication ``r`` uses seed ``derive_seed(seed, r)``. Returns an array of
    shape ``(n_reps, len(levels))`` with ``nan`` where ``t_cap`` was reached.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0 or np.any(np.diff(levels) <= 0) or levels[0] <= x0:
        raise ValueError("levels must be increasing and above x0")
    if t_cap is None:
        t_cap = _default_t_cap(model, x0, levels[-1])
    cap = n_steps_for(t_cap, dt)
    if USE_NUMBA:
        return _passage_loop(model, x0, levels, n_reps, dt, seed, cap, bridge)
    return _passage_lockstep(model, x0, levels, n_reps, dt, seed, cap, bridge, batch)


_PASSAGE_BLOCK = 1 << 13


def _passage_loop(model, x0, levels, n_reps, dt, seed, cap, bridge):
    out = np.full((n_reps, levels.size), np.nan)
    args = model.kernel_args()
    so = np.zeros(levels.size, dtype=np.int64)
    xo = np.zeros(levels.size)
    for r in range(n_reps):
        stream = NoiseStream(derive_seed(seed, r), block=_PASSAGE_BLOCK)
        x, used, j = float(x0), 0, 0
        while j < levels.size and used < cap:
            pos = stream.pos
            steps, j, x, code = K.advance_levels(*args, x, levels, j, dt, stream.z, stream.u, pos,
                                                 cap - used, bridge, so, xo, used)
            stream.advance(steps)
            used += steps
            if code == K.BLOW_UP:
                raise SimulationBlowUp(used - 1)
        out[r, :j] = so[:j] * dt
    return out


def _passage_lockstep(model, x0, levels, n_reps, dt, seed, cap, bridge, batch):
    out = np.full((n_reps, levels.size), np.nan)
    B = _PASSAGE_BLOCK
    for lo in range(0, n_reps, batch):
        reps = np.arange(lo, min(n_reps, lo + batch))
        streams = [NoiseStream(derive_seed(seed, r), block=B) for r in reps]
        x = np.full(reps.size, float(x0))
        j = np.zeros(reps.size, dtype=np.int64)
        steps = np.zeros((reps.size, levels.size), dtype=np.int64)
        used = 0
        while used < cap and np.any(j < levels.size):
            alive = np.flatnonzero(j < levels.size)
            z = np.zeros((reps.size, B))
            u = np.zeros((reps.size, B))
            for i in alive:
                streams[i].pos  # refills an exhausted block
                z[i], u[i] = streams[i].z, streams[i].u
            width = min(B, cap - used)
            bad = K.advance_levels_np(model.b, model.sig, x, j, levels, dt, z, u, width, bridge,
                                      steps, used)
            if bad is not None:
                raise SimulationBlowUp(used + bad[1])
            for i in alive:
                streams[i].advance(B)
            used += width
        for i in range(reps.size):
            out[reps[i], :j[i]] = steps[i, :j[i]] * dt
    return out
