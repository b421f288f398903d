"""Harvest reward structure and the full-information solution.

With known dynamics the best long-run reward rate is the maximum over
thresholds ``y`` in ``[y1, beta]`` of ``g(y) / xi(y)``, attained by the
strategy that harvests back to ``y0`` whenever the stand reaches the
maximising threshold.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .diffusion import DiffusionModel, DriftClassParams, OracleError, validate_class_membership
from .functions import FunctionSpec

DEFAULT_GRID_N = 512


class RewardSpecError(ValueError):
    pass


class ClassMembershipError(ValueError):
    pass


@dataclass(frozen=True)
class RewardSpec:
    """Reward ``g`` on ``(y0, inf)`` with anchors ``y0 < y1 < beta``.

    ``g(y0)`` is taken as 0 (an impulse of size zero is no intervention).
    ``M1``/``M2`` bound the expected first-passage time on ``[y1, beta]``;
    when left as ``None`` they are filled in from the oracle by
    :meth:`with_default_bounds`.
    """

    g: FunctionSpec
    y0: float
    y1: float
    beta: float
    M1: float = None
    M2: float = None
    check_n: int = field(default=401, compare=False)

    def __post_init__(self):
        y0, y1, beta = float(self.y0), float(self.y1), float(self.beta)
        if not y0 < y1 < beta:
            raise RewardSpecError("need y0 < y1 < beta")
        g = self.g
        if not g(y0 + 1e-6) < 0:
            raise RewardSpecError("g(y0+) must be negative (fixed intervention cost)")
        if not g(y1) >= 0:
            raise RewardSpecError("g(y1) must be non-negative")
        below = np.linspace(y0, y1, self.check_n)[1:-1]
        if below.size and np.any(g(below) >= 0):
            raise RewardSpecError("g must be negative on (y0, y1)")
        gb = g(beta)
        if not gb > 0:
            raise RewardSpecError("g(beta) must be positive")
        above = beta + np.linspace(0.0, max(1.0, beta - y0), self.check_n)[1:]
        if np.any(g(above) > gb):
            raise RewardSpecError("need g(y) <= g(beta) for y > beta")
        if (self.M1 is None) != (self.M2 is None):
            raise RewardSpecError("give both M1 and M2 or neither")
        if self.M1 is not None and not 0 < self.M1 <= self.M2:
            raise RewardSpecError("need 0 < M1 <= M2")

    @classmethod
    def capped_linear(cls, cost, y0, beta, **kw):
        """``g(y) = min(y, beta) - cost``; ``y1`` is the break-even level."""
        return cls(FunctionSpec.capped_linear(beta, cost), y0, cost, beta, **kw)

    def reward(self, x):
        """``g(x)`` with the ``g(y0) = 0`` convention."""
        x = np.asarray(x, dtype=float)
        out = np.where(x == self.y0, 0.0, self.g(x))
        return out if out.ndim else float(out)

    def scaled(self, c):
        return replace(self, g=self.g.scaled(c))

    def with_default_bounds(self, model):
        if self.M1 is not None:
            return self
        xi = model.oracle.xi(self.y0, [self.y1, self.beta])
        return replace(self, M1=0.5 * float(xi[0]), M2=2.0 * float(xi[1]))

    def to_dict(self):
        return {"g": self.g.to_dict(), "y0": self.y0, "y1": self.y1, "beta": self.beta,
                "M1": self.M1, "M2": self.M2}


@dataclass(frozen=True, eq=False)
class OracleSolution:
    phi: float
    y_star: float
    grid: np.ndarray
    profile: np.ndarray

    def rate_at(self, y):
        """Profile value at a grid point (exact lookup)."""
        i = int(np.argmin(np.abs(self.grid - y)))
        if not math.isclose(self.grid[i], y, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"{y!r} is not on the oracle grid")
        return float(self.profile[i])


def threshold_grid(reward, grid_n=DEFAULT_GRID_N):
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    return np.linspace(reward.y1, reward.beta, int(grid_n))


def check_model(model, reward=None, step=0.01):
    """Raise :class:`ClassMembershipError` unless ``model`` passes the class
    check on a grid wide enough for the reward anchors."""
    A = model.class_params.recurrence_A
    R = max(A + 1.0, 2.0 * A)
    if reward is not None:
        R = max(R, abs(reward.y0) + 1.0, abs(reward.beta) + 1.0)
    rep = validate_class_membership(model, np.arange(-R, R + 0.5 * step, step))
    if not rep:
        raise ClassMembershipError(f"{rep.violation} fails at x={rep.x:g}")
    return rep


def solve_oracle(model, reward, grid_n=DEFAULT_GRID_N, validate=True):
    """Grid maximisation of ``g / xi_b`` over ``[y1, beta]``.

    Ties go to the smallest threshold.
    """
    if validate:
        check_model(model, reward)
    ys = threshold_grid(reward, grid_n)
    xi = np.asarray(model.oracle.xi(reward.y0, ys))
    if not xi[0] >= 1e-12:
        raise OracleError(f"xi(y1) = {xi[0]!r} is degenerate")
    profile = reward.g(ys) / xi
    i = int(np.argmax(profile))
    return OracleSolution(float(profile[i]), float(ys[i]), ys, profile)


def reward_rate_of_threshold(model, reward, y):
    """Long-run reward per unit time of the threshold strategy at ``y``."""
    y = np.asarray(y, dtype=float)
    tol = 1e-12 * max(1.0, abs(reward.beta))
    if np.any(y < reward.y1 - tol) or np.any(y > reward.beta + tol):
        raise ValueError("threshold must lie in [y1, beta]")
    out = reward.g(y) / np.asarray(model.oracle.xi(reward.y0, y))
    return out if np.ndim(out) else float(out)


# problem files -----------------------------------------------------------

try:  # pragma: no cover - version dependent
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml


class ProblemFileError(ValueError):
    pass


_FUNC_KEYS = ("drift", "sigma", "reward")
_NUMERIC_SETTINGS = {
    "T": float, "dt": float, "seed": int, "m": float, "a": float, "grid_n": int,
    "trigger_factor": float, "initial_explorations": int,
}
_OTHER_SETTINGS = {"h_rule": str, "kernel": str, "bridge": bool, "inner": str}
_MODEL_KEYS = {"name", "C", "A", "gamma", "sigma_lower", "sigma_upper", "y0", "y1", "beta", "M1", "M2"}


def _known_keys():
    keys = set(_MODEL_KEYS) | set(_NUMERIC_SETTINGS) | set(_OTHER_SETTINGS)
    for f in _FUNC_KEYS:
        keys |= {f, f"{f}_params", f"{f}_table_x", f"{f}_table_y", f"{f}_scale"}
    return keys


KNOWN_KEYS = frozenset(_known_keys())


@dataclass(frozen=True)
class Problem:
    """A model, a reward and run defaults, as read from a problem file."""

    model: DiffusionModel
    reward: RewardSpec
    settings: dict = field(default_factory=dict)
    name: str = ""

    def setting(self, key, default=None):
        return self.settings.get(key, default)

    def to_dict(self):
        return {"name": self.name, "model": self.model.to_dict(), "reward": self.reward.to_dict(),
                "settings": dict(self.settings)}


def _func_from(d, key):
    kind = d.get(key)
    if kind is None:
        raise ProblemFileError(f"missing key {key!r}")
    if kind == "table":
        xs, ys = d.get(f"{key}_table_x"), d.get(f"{key}_table_y")
        if xs is None or ys is None:
            raise ProblemFileError(f"{key} = 'table' needs {key}_table_x and {key}_table_y")
        spec = FunctionSpec.table(xs, ys)
    elif kind == "constant":
        spec = FunctionSpec.constant(*d.get(f"{key}_params", [0.0]))
    else:
        if f"{key}_params" not in d:
            raise ProblemFileError(f"missing key {key}_params")
        spec = FunctionSpec(kind, tuple(d[f"{key}_params"]))
    return spec.scaled(d.get(f"{key}_scale", 1.0))


def problem_from_mapping(d, overrides=None):
    """Build a :class:`Problem` from flat key/value pairs."""
    d = dict(d)
    if overrides:
        d.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(d) - KNOWN_KEYS)
    if unknown:
        raise ProblemFileError(f"unknown keys: {', '.join(unknown)}")
    for k, v in d.items():
        if isinstance(v, dict):
            raise ProblemFileError(f"key {k!r}: nested tables are not allowed")
    try:
        drift = _func_from(d, "drift")
        sigma = _func_from(d, "sigma")
        g = _func_from(d, "reward")
        cp = DriftClassParams(d.get("C", 1.0), d.get("A", 1.0), d.get("gamma", 0.5),
                              d.get("sigma_lower", 1.0), d.get("sigma_upper", 1.0))
        y0 = float(d.get("y0", 0.0))
        beta = float(d["beta"])
        y1 = d.get("y1")
        if y1 is None:
            y1 = break_even_level(g, y0, beta)
        reward = RewardSpec(g, y0, float(y1), beta, d.get("M1"), d.get("M2"))
    except KeyError as exc:
        raise ProblemFileError(f"missing key {exc.args[0]!r}") from None
    except ProblemFileError:
        raise
    except ValueError as exc:
        raise ProblemFileError(str(exc)) from exc
    settings = {}
    for k, typ in {**_NUMERIC_SETTINGS, **_OTHER_SETTINGS}.items():
        if k in d:
            settings[k] = typ(d[k])
    name = str(d.get("name", ""))
    return Problem(DiffusionModel(drift, sigma, cp, name), reward, settings, name)


def load_problem(path, overrides=None):
    with open(path, "rb") as fh:
        try:
            d = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ProblemFileError(f"{path}: {exc}") from exc
    return problem_from_mapping(d, overrides)


def break_even_level(g, y0, beta, n=4001):
    """Numerical ``inf{y > y0 : g(y) > 0}`` on ``(y0, beta]``."""
    ys = np.linspace(y0, beta, n)[1:]
    pos = np.flatnonzero(g(ys) > 0)
    if pos.size == 0:
        raise RewardSpecError("g is not positive anywhere on (y0, beta]")
    k = pos[0]
    if k == 0:
        return float(ys[0])
    lo, hi = ys[k - 1], ys[k]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return float(hi)
