"""Experiment harness: loss per (horizon, replication) cell, aggregation and
log-log rate fits.

Pipelines

``density_risk``      L1 distance on ``[-2, 2]`` between the kernel estimate
                      from one path of length ``T`` and the exact density.
``threshold_regret``  ``Phi - (g / xi)(y_hat)`` for the plug-in threshold
                      estimated from one path of length ``T``.
``strategy_regret``   ``Phi`` minus the average reward of a data-driven run.
``oracle_check``      ``|Phi - average reward|`` of the threshold strategy at
                      ``y*``.

Cell ``(i, r)`` (horizon index, replication) uses seed
``derive_seed(master_seed, i, r)``; results do not depend on worker count or
execution order.
"""
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from . import catalog
from .control import (EstimatorConfig, ExplorationSchedule, ThresholdStrategy, average_reward,
                      run_data_driven, run_threshold_strategy)
from .diffusion import simulate_path
from .estimation import KernelDensityEstimate, build_xi_estimate, estimate_threshold, get_kernel, \
    default_bandwidth
from .problem import check_model, load_problem, reward_rate_of_threshold, solve_oracle
from .rng import derive_seed

PIPELINES = ("density_risk", "threshold_regret", "strategy_regret", "oracle_check")
THREADS_ENV = "IMPULSELAB_THREADS"
MAX_FAIL_FRACTION = 0.10
RISK_INTERVAL = (-2.0, 2.0)
RISK_POINTS = 2001


class ExperimentError(RuntimeError):
    pass


class FitError(ValueError):
    pass


def default_workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExperimentPlan:
    """``problem`` is a catalog name or a problem-file path; ``settings``
    override the problem's run settings."""

    problem: str
    horizons: tuple
    replications: int
    master_seed: int = 0
    pipeline: str = "threshold_regret"
    output: str = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        hs = tuple(float(h) for h in self.horizons)
        object.__setattr__(self, "horizons", hs)
        if len(hs) < 1 or any(b <= a for a, b in zip(hs, hs[1:])) or hs[0] <= 0:
            raise ValueError("horizons must be positive and strictly increasing")
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}; choose from {', '.join(PIPELINES)}")

    def to_dict(self):
        return {"problem": self.problem, "horizons": list(self.horizons),
                "replications": self.replications, "master_seed": self.master_seed,
                "pipeline": self.pipeline, "settings": dict(sorted(self.settings.items()))}


def resolve_problem(ref, overrides=None):
    """Catalog name or problem-file path to a :class:`Problem` with bounds."""
    if os.path.exists(ref):
        prob = load_problem(ref)
    else:
        prob = catalog.get_problem(ref)
    if overrides:
        prob = type(prob)(prob.model, prob.reward, {**prob.settings, **overrides}, prob.name)
    check_model(prob.model, prob.reward)
    return type(prob)(prob.model, prob.reward.with_default_bounds(prob.model), prob.settings, prob.name)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci: tuple
    n_points: int
    dropped: tuple = ()


def fit_loglog_slope(points, level=0.95):
    """OLS of ``log(loss)`` on ``log(T)``; nonpositive losses are dropped."""
    pts = [(float(T), float(v)) for T, v in points]
    keep = [(T, v) for T, v in pts if v > 0 and math.isfinite(v)]
    dropped = tuple(T for T, v in pts if not (v > 0 and math.isfinite(v)))
    if len(keep) < 3:
        raise FitError(f"need at least 3 positive losses, have {len(keep)}")
    x = np.log([T for T, _ in keep])
    y = np.log([v for _, v in keep])
    res = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + level / 2, len(keep) - 2)
    half = q * res.stderr if np.isfinite(res.stderr) else math.inf
    return SlopeFit(float(res.slope), float(res.intercept),
                    (float(res.slope - half), float(res.slope + half)), len(keep), dropped)


@dataclass(eq=False)
class RateReport:
    plan: dict
    horizons: list
    mean_loss: list
    se: list
    n: list
    n_failed: list
    fit: SlopeFit
    records: list
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"plan": self.plan, "summary": [
            {"T": T, "mean_loss": m, "se": s, "n": n, "n_failed": f}
            for T, m, s, n, f in zip(self.horizons, self.mean_loss, self.se, self.n, self.n_failed)],
            "fit": asdict(self.fit) if self.fit else None, "records": self.records, "extra": self.extra}

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True)

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "mean_loss", "se", "n"])
        for T, m, s, n in zip(self.horizons, self.mean_loss, self.se, self.n):
            w.writerow([repr(T), repr(m), repr(s), n])
        return buf.getvalue()

    def records_csv(self):
        """One row per cell for external plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "replication", "seed", "loss", "failed"])
        for r in self.records:
            w.writerow([repr(r["T"]), r["replication"], r["seed"],
                        "" if r["loss"] is None else repr(r["loss"]), int(r["failed"])])
        return buf.getvalue()

    def write(self, path):
        """``path`` is the JSON file; the summary CSV goes next to it."""
        base = path[:-5] if path.endswith(".json") else path
        with open(base + ".json", "w") as fh:
            fh.write(self.to_json())
        with open(base + ".csv", "w") as fh:
            fh.write(self.summary_csv())
        with open(base + ".records.csv", "w") as fh:
            fh.write(self.records_csv())

    def monotone(self, allow=1):
        """Mean loss decreasing in T, allowing ``allow`` inversions within one SE."""
        bad = 0
        for i in range(len(self.mean_loss) - 1):
            if self.mean_loss[i + 1] > self.mean_loss[i]:
                if self.mean_loss[i + 1] - self.mean_loss[i] > max(self.se[i], self.se[i + 1]):
                    return False
                bad += 1
        return bad <= allow


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# pipelines -----------------------------------------------------------------

def _density_risk(prob, T, seed):
    s = prob.settings
    dt = s.get("dt", 1e-3)
    path = simulate_path(prob.model, prob.reward.y0, T, dt, seed)
    est = KernelDensityEstimate(path, get_kernel(s.get("kernel", "epanechnikov")), default_bandwidth(T))
    xs = np.linspace(*RISK_INTERVAL, RISK_POINTS)
    err = np.abs(est(xs) - prob.model.oracle.density(xs))
    return float(trapezoid(err, xs)), {}


def _estimated_threshold(prob, path):
    s = prob.settings
    r = prob.reward
    est = KernelDensityEstimate(path, get_kernel(s.get("kernel", "epanechnikov")), default_bandwidth(path.T))
    xi = build_xi_estimate(est, prob.model.sigma, r.y0, s.get("a", 1e-3), r.M1, s.get("inner", "full"))
    return estimate_threshold(xi, r, s.get("grid_n", 512))


def _threshold_regret(prob, T, seed, phi):
    path = simulate_path(prob.model, prob.reward.y0, T, prob.settings.get("dt", 1e-3), seed)
    y_hat, value_hat = _estimated_threshold(prob, path)
    rate = reward_rate_of_threshold(prob.model, prob.reward, y_hat)
    return phi - rate, {"y_hat": y_hat, "value_hat": value_hat}


def _schedule(s):
    return ExplorationSchedule(float(s.get("m", 2.5)), initial_explorations=int(s.get("initial_explorations", 1)),
                               trigger_factor=float(s.get("trigger_factor", 1.25)))


def _estimator(s, reward):
    return EstimatorConfig(kernel=s.get("kernel", "epanechnikov"), h_rule=str(s.get("h_rule", "inv_sqrt")),
                           a=float(s.get("a", 1e-3)), M1=reward.M1, grid_n=int(s.get("grid_n", 512)),
                           inner=s.get("inner", "full"))


def _strategy_regret(prob, T, seed, phi):
    s = prob.settings
    run = run_data_driven(prob.model, prob.reward, _schedule(s), _estimator(s, prob.reward), T,
                          s.get("dt", 1e-3), seed, bool(s.get("bridge", True)))
    scaled = [S / t ** (2.0 / 3.0) for t, S in run.exploration_checkpoints if t > 0]
    return phi - average_reward(run), {
        "S_T": run.S_T, "S_T_scaled": run.S_T / run.T ** (2.0 / 3.0),
        "M_obs": max(scaled) if scaled else None, "n_interventions": len(run.interventions),
        "n_explorations": len(run.exploration_segments)}


def _oracle_check(prob, T, seed, sol):
    s = prob.settings
    run = run_threshold_strategy(prob.model, prob.reward, ThresholdStrategy(sol.y_star), T,
                                 s.get("dt", 1e-3), seed, bool(s.get("bridge", True)))
    rate = average_reward(run)
    return abs(sol.phi - rate), {"rate": rate}


def _cell(args):
    pipeline, prob, sol, T, seed = args
    try:
        if pipeline == "density_risk":
            loss, extra = _density_risk(prob, T, seed)
        elif pipeline == "threshold_regret":
            loss, extra = _threshold_regret(prob, T, seed, sol.phi)
        elif pipeline == "strategy_regret":
            loss, extra = _strategy_regret(prob, T, seed, sol.phi)
        else:
            loss, extra = _oracle_check(prob, T, seed, sol)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        return {"loss": float(loss), "failed": False, **extra}
    except Exception as exc:  # recorded per cell, judged in aggregate
        return {"loss": None, "failed": True, "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(plan, workers=None, problem=None):
    """Run every (horizon, replication) cell of ``plan`` and fit the rate.

    Raises :class:`ExperimentError` when more than 10% of the cells fail.
    The report is written to ``plan.output`` when set.
    """
    prob = problem if problem is not None else resolve_problem(plan.problem, plan.settings)
    if problem is not None and plan.settings:
        prob = type(prob)(prob.model, prob.reward, {**prob.settings, **plan.settings}, prob.name)
    sol = solve_oracle(prob.model, prob.reward, int(prob.settings.get("grid_n", 512)))
    cells = [(i, r, T, derive_seed(plan.master_seed, i, r))
             for i, T in enumerate(plan.horizons) for r in range(plan.replications)]
    jobs = [(plan.pipeline, prob, sol, T, seed) for _, _, T, seed in cells]
    workers = default_workers() if workers is None else int(workers)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_cell, jobs, chunksize=1))
    else:
        results = [_cell(j) for j in jobs]
    records = [{"T": T, "replication": r, "seed": seed, **res}
               for (_, r, T, seed), res in zip(cells, results)]
    n_fail = sum(rec["failed"] for rec in records)
    if n_fail > MAX_FAIL_FRACTION * len(records):
        first = next(rec["error"] for rec in records if rec["failed"])
        raise ExperimentError(f"{n_fail} of {len(records)} cells failed; first: {first}")
    means, ses, ns, fails = [], [], [], []
    for T in plan.horizons:
        vals = np.array([rec["loss"] for rec in records if rec["T"] == T and not rec["failed"]])
        nf = sum(1 for rec in records if rec["T"] == T and rec["failed"])
        ns.append(int(vals.size))
        fails.append(nf)
        means.append(float(vals.mean()) if vals.size else math.nan)
        ses.append(float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan)
    try:
        fit = fit_loglog_slope(zip(plan.horizons, means))
    except FitError:
        fit = None
    extra = {"phi": sol.phi, "y_star": sol.y_star, "problem": prob.to_dict()}
    if plan.pipeline == "strategy_regret":
        extra["M_obs"] = max((rec["M_obs"] for rec in records if not rec["failed"] and rec["M_obs"]),
                             default=None)
    report = RateReport(plan.to_dict(), list(plan.horizons), means, ses, ns, fails, fit, records, extra)
    if plan.output:
        report.write(plan.output)
    return report
