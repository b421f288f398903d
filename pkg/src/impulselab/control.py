"""Impulse strategies on simulated paths.

A threshold strategy harvests back to ``y0`` whenever the stand reaches a
fixed level. The data-driven strategy splits time into periods: exploration
periods let the uncontrolled process run up to ``beta`` and back down to
``y0`` (collecting the record ``X'``), exploitation periods use a threshold
estimated from ``X'`` and frozen for the period.
"""
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _kernels as K
from .diffusion import DEFAULT_DT, SimulationBlowUp, Stepper, n_steps_for
from .estimation import DEFAULT_A, OccupationHistogram, build_xi_estimate, estimate_threshold, \
    get_kernel, default_bandwidth
from .problem import DEFAULT_GRID_N, solve_oracle
from .rng import NoiseStream

EXPLORATION = "exploration"
EXPLOITATION = "exploitation"


class RunawayExplorationError(RuntimeError):
    """An exploration segment ran past its simulated-time cap."""


class RunValidationError(AssertionError):
    pass


@dataclass(frozen=True)
class ThresholdStrategy:
    y_cut: float

    def check(self, reward):
        if not reward.y1 <= self.y_cut <= reward.beta:
            raise ValueError(f"threshold {self.y_cut!r} outside [y1, beta]")
        return self


@dataclass(frozen=True)
class ExplorationSchedule:
    """Explore at a period boundary ``t`` when ``S_t < trigger_factor * m * t^(2/3)``
    or while fewer than ``initial_explorations`` periods have run.

    ``trigger_factor > 1`` keeps ``t^(-2/3) S_t`` above ``m`` at period
    boundaries rather than just below it.
    """

    m: float
    exponent: float = 2.0 / 3.0
    initial_explorations: int = 1
    trigger_factor: float = 1.25

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if self.exponent != 2.0 / 3.0:
            raise ValueError("the exploration exponent is fixed at 2/3")
        if self.initial_explorations < 0:
            raise ValueError("initial_explorations must be non-negative")
        if not self.trigger_factor >= 1.0:
            raise ValueError("trigger_factor must be at least 1")

    def explore(self, t, S, n_periods):
        if n_periods < self.initial_explorations or S <= 0.0:
            return True
        return S < self.trigger_factor * self.m * t ** self.exponent


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings of the plug-in threshold estimate used in exploitation."""

    kernel: str = "epanechnikov"
    h_rule: str = "inv_sqrt"
    a: float = DEFAULT_A
    M1: float = None
    grid_n: int = DEFAULT_GRID_N
    inner: str = "full"
    bin_width: float = 1e-4

    def bandwidth(self, S):
        if self.h_rule == "inv_sqrt":
            return default_bandwidth(S)
        try:
            h = float(self.h_rule)
        except ValueError:
            raise ValueError(f"h_rule must be 'inv_sqrt' or a positive number, got {self.h_rule!r}") from None
        if not h > 0:
            raise ValueError("fixed bandwidth must be positive")
        return h


@dataclass(frozen=True)
class Intervention:
    t: float
    x_pre: float
    reward: float
    kind: str


@dataclass(frozen=True)
class ExplorationSegment:
    t_start: float
    t_beta: float
    t_end: float
    n_record: int


@dataclass(eq=False)
class ControlledRun:
    T: float
    dt: float
    seed: int
    y0: float
    interventions: list = field(default_factory=list)
    exploration_checkpoints: list = field(default_factory=list)
    threshold_history: list = field(default_factory=list)
    exploration_segments: list = field(default_factory=list)
    run_meta: dict = field(default_factory=dict)
    record: np.ndarray = None

    @property
    def total_reward(self):
        return math.fsum(iv.reward for iv in self.interventions)

    @property
    def S_T(self):
        return self.exploration_checkpoints[-1][1] if self.exploration_checkpoints else 0.0

    def to_dict(self):
        return {
            "run_meta": {**self.run_meta, "T": self.T, "dt": self.dt, "seed": self.seed, "y0": self.y0},
            "interventions": [asdict(iv) for iv in self.interventions],
            "threshold_history": [{"t": t, "y_hat": y} for t, y in self.threshold_history],
            "exploration_checkpoints": [{"t": t, "S_t": s} for t, s in self.exploration_checkpoints],
            "exploration_segments": [asdict(s) for s in self.exploration_segments],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d):
        meta = dict(d["run_meta"])
        T, dt, seed, y0 = meta.pop("T"), meta.pop("dt"), meta.pop("seed"), meta.pop("y0")
        return cls(
            T=T, dt=dt, seed=seed, y0=y0,
            interventions=[Intervention(**iv) for iv in d["interventions"]],
            exploration_checkpoints=[(c["t"], c["S_t"]) for c in d["exploration_checkpoints"]],
            threshold_history=[(h["t"], h["y_hat"]) for h in d["threshold_history"]],
            exploration_segments=[ExplorationSegment(**s) for s in d.get("exploration_segments", [])],
            run_meta=meta,
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _meta(model, reward, bridge, **extra):
    return {"model": model.to_dict(), "reward": reward.to_dict(), "bridge": bool(bridge), **extra}


def run_threshold_strategy(model, reward, strategy, T, dt=DEFAULT_DT, seed=0, bridge=True):
    """Harvest to ``y0`` whenever the path reaches ``strategy.y_cut``; run to ``T``."""
    strategy.check(reward)
    if not T > 0:
        raise ValueError("T must be positive")
    n_total = n_steps_for(T, dt)
    stepper = Stepper(model, dt, NoiseStream(seed), bridge)
    run = ControlledRun(T, dt, seed, reward.y0,
                        run_meta=_meta(model, reward, bridge, strategy={"y_cut": strategy.y_cut}))
    run.threshold_history.append((0.0, strategy.y_cut))
    used = 0
    while used < n_total:
        steps, code, x = stepper.run(reward.y0, strategy.y_cut, True, n_total - used)
        used += steps
        if code == K.NO_HIT:
            break
        x_pre = strategy.y_cut if bridge else x
        run.interventions.append(Intervention(used * dt, x_pre, reward.reward(x_pre), EXPLOITATION))
        if used < n_total:
            run.threshold_history.append((used * dt, strategy.y_cut))
    run.exploration_checkpoints.append((n_total * dt, 0.0))
    return run


def threshold_sweep_rates(model, reward, ys, T, dt=DEFAULT_DT, seed=0, bridge=True):
    """Average reward over ``[0, T]`` of the threshold strategy at each of
    the increasing levels ``ys``, all driven by one noise stream.

    Cycles are uncontrolled excursions from ``y0`` up to ``max(ys)``; the run
    at threshold ``y`` is the concatenation of the cycles' passage times to
    ``y``. For a single level this reproduces :func:`run_threshold_strategy`
    draw for draw.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim != 1 or ys.size == 0 or np.any(np.diff(ys) <= 0):
        raise ValueError("levels must be strictly increasing")
    for y in (ys[0], ys[-1]):
        ThresholdStrategy(float(y)).check(reward)
    n_total = n_steps_for(T, dt)
    stream = NoiseStream(seed)
    args = model.kernel_args()
    clock = np.zeros(ys.size, dtype=np.int64)
    total = np.zeros(ys.size)
    steps_out = np.zeros(ys.size, dtype=np.int64)
    x_out = np.zeros(ys.size)
    while clock[0] < n_total:
        j, x, used = 0, float(reward.y0), 0
        # the lowest level has the earliest clock; nothing beyond its horizon counts
        cap = n_total - int(clock[0])
        while j < ys.size and used < cap:
            pos = stream.pos  # may refill the block, so read it before z and u
            steps, j, x, code = K.advance_levels(*args, x, ys, j, dt, stream.z, stream.u, pos,
                                                 cap - used, bridge, steps_out, x_out, used)
            stream.advance(steps)
            used += steps
            if code == K.BLOW_UP:
                raise SimulationBlowUp(int(clock[0]) + used - 1)
        done = clock[:j] + steps_out[:j]
        ok = np.zeros(ys.size, dtype=bool)
        ok[:j] = done <= n_total
        total[ok] += reward.reward(x_out[ok])
        clock[:j] = done
        if j < ys.size:
            break
    return total / T


def average_reward(run):
    if not run.T > 0:
        raise ValueError("run duration must be positive")
    return run.total_reward / run.T


def regret(model, reward, run, phi=None):
    """``Phi - average_reward(run)``; ``phi`` may be passed to skip the oracle."""
    if phi is None:
        phi = solve_oracle(model, reward).phi
    return phi - average_reward(run)


def run_data_driven(model, reward, schedule, config=None, T=1e4, dt=DEFAULT_DT, seed=0,
                    bridge=True, explore_cap=None, keep_record=False):
    """Data-driven strategy alternating exploration and exploitation periods.

    The threshold estimate is recomputed from the whole exploration record at
    the start of an exploitation period; it only changes after the record has
    grown, so it is cached between explorations. ``explore_cap`` bounds one
    exploration period in simulated time (default ``100 * M2``).
    """
    config = config or EstimatorConfig()
    kernel = get_kernel(config.kernel)
    if config.M1 is None:
        if reward.M1 is None:
            raise ValueError("M1 is required (set it in the reward or the estimator config)")
        config = EstimatorConfig(**{**asdict(config), "M1": reward.M1})
    if explore_cap is None:
        explore_cap = 100.0 * (reward.M2 if reward.M2 is not None else 1e3)
    if not T > 0:
        raise ValueError("T must be positive")
    y0, beta = reward.y0, reward.beta
    n_total = n_steps_for(T, dt)
    cap_steps = n_steps_for(explore_cap, dt)
    stepper = Stepper(model, dt, NoiseStream(seed), bridge)
    hist = OccupationHistogram(y0 - 2.0, beta + 2.0, config.bin_width, margin=2.0)
    record = [] if keep_record else None
    meta = _meta(model, reward, bridge, schedule=asdict(schedule), estimator=asdict(config))
    run = ControlledRun(T, dt, seed, y0, run_meta=meta)
    t_steps = s_steps = n_periods = 0
    y_hat = None
    stale = True

    def estimate():
        h = min(config.bandwidth(s_steps * dt), hist.margin)
        xi = build_xi_estimate(hist.estimate(kernel, h), model.sigma, y0, config.a, config.M1, config.inner)
        return estimate_threshold(xi, reward, config.grid_n)[0]

    while t_steps < n_total:
        run.exploration_checkpoints.append((t_steps * dt, s_steps * dt))
        if schedule.explore(t_steps * dt, s_steps * dt, n_periods):
            t0 = t_steps
            seg = []
            t_beta = math.nan
            x = y0
            for level, up in ((beta, True), (y0, False)):
                room = min(n_total - t_steps, cap_steps - (t_steps - t0))
                steps, code, x = stepper.run(x, level, up, room, seg)
                t_steps += steps
                if code == K.NO_HIT:
                    if t_steps < n_total:
                        raise RunawayExplorationError(
                            f"exploration from t={t0 * dt:g} ran past {explore_cap:g} time units")
                    break
                if up:
                    t_beta = t_steps * dt
            vals = np.concatenate(seg) if seg else np.empty(0)
            hist.add(vals, dt)
            if record is not None:
                record.append(vals)
            s_steps += t_steps - t0
            run.exploration_segments.append(ExplorationSegment(t0 * dt, t_beta, t_steps * dt, int(vals.size)))
            stale = True
        else:
            if stale:
                y_hat = estimate()
                stale = False
            run.threshold_history.append((t_steps * dt, y_hat))
            steps, code, x = stepper.run(y0, y_hat, True, n_total - t_steps)
            t_steps += steps
            if code != K.NO_HIT:
                x_pre = y_hat if bridge else x
                run.interventions.append(Intervention(t_steps * dt, x_pre, reward.reward(x_pre), EXPLOITATION))
        n_periods += 1
    run.exploration_checkpoints.append((t_steps * dt, s_steps * dt))
    if record is not None:
        run.record = np.concatenate(record) if record else np.empty(0)
    return run


def validate_run(run, reward=None, tol=1e-12):
    """Raise :class:`RunValidationError` unless ``run`` is admissible.

    Checks: time-ordered interventions with pre-impulse states at or above
    ``y0``; one frozen threshold and at most one harvest per exploitation
    period, never below that threshold; no harvest inside an exploration
    period; a nondecreasing exploration clock with ``S_t <= t``.
    """
    ts = [iv.t for iv in run.interventions]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise RunValidationError("interventions are not time-ordered")
    for iv in run.interventions:
        if iv.x_pre < run.y0 - tol:
            raise RunValidationError(f"pre-impulse state {iv.x_pre} below y0 at t={iv.t}")
        if iv.t > run.T + tol:
            raise RunValidationError("intervention after the horizon")
    cps = run.exploration_checkpoints
    for (t_a, s_a), (t_b, s_b) in zip(cps, cps[1:]):
        if t_b < t_a or s_b < s_a - tol:
            raise RunValidationError("exploration clock decreases")
    if any(s > t + tol for t, s in cps):
        raise RunValidationError("exploration time exceeds elapsed time")
    starts = np.array([t for t, _ in run.threshold_history])
    seg_starts = np.array([sg.t_start for sg in run.exploration_segments])
    seen = set()
    for iv in run.interventions:
        k = int(np.searchsorted(starts, iv.t, side="left")) - 1
        if k < 0:
            raise RunValidationError(f"intervention at t={iv.t} precedes any threshold")
        if k in seen:
            raise RunValidationError(f"two harvests in the exploitation period starting at {starts[k]}")
        seen.add(k)
        y = run.threshold_history[k][1]
        if iv.x_pre < y - 1e-9:
            raise RunValidationError(f"harvest at {iv.x_pre} below the frozen threshold {y}")
        j = int(np.searchsorted(seg_starts, iv.t, side="left")) - 1
        if j >= 0 and seg_starts[j] >= starts[k]:
            raise RunValidationError(f"harvest at t={iv.t} inside an exploration period")
        if reward is not None and not math.isclose(iv.reward, reward.reward(iv.x_pre), rel_tol=0, abs_tol=1e-12):
            raise RunValidationError("recorded reward differs from g(x_pre)")
    return True
