import dataclasses
import json
import math

import numpy as np
import pytest

from impulselab.control import (ControlledRun, EstimatorConfig, ExplorationSchedule, RunawayExplorationError,
                                RunValidationError, ThresholdStrategy, average_reward, regret,
                                run_data_driven, run_threshold_strategy, threshold_sweep_rates, validate_run)
from impulselab.diffusion import DiffusionModel, DriftClassParams
from impulselab.functions import FunctionSpec as F
from impulselab.problem import RewardSpec, reward_rate_of_threshold
from impulselab.rng import derive_seed

M = 2.5


@pytest.fixture(scope="module")
def dd_run(ou_problem):
    return run_data_driven(ou_problem.model, ou_problem.reward, ExplorationSchedule(M), T=2000.0, seed=41,
                           keep_record=True)


# deterministic cycle ----------------------------------------------------------

def _ode():
    m = DiffusionModel(F.constant(1.0), F.constant(0.0), DriftClassParams(1, 1, 0.5, 1, 1))
    return m, RewardSpec.capped_linear(0.5, 0.0, 1.0)


@pytest.mark.parametrize("bridge", [True, False])
def test_deterministic_cycle(bridge):
    m, r = _ode()
    run = run_threshold_strategy(m, r, ThresholdStrategy(1.0), 10.0, dt=1 / 128, bridge=bridge)
    assert len(run.interventions) == 10
    assert [iv.t for iv in run.interventions] == [float(k) for k in range(1, 11)]
    assert average_reward(run) == 0.5
    validate_run(run, r)


def test_threshold_outside_range(ou_problem):
    with pytest.raises(ValueError):
        run_threshold_strategy(ou_problem.model, ou_problem.reward, ThresholdStrategy(0.2), 10.0)
    with pytest.raises(ValueError):
        run_threshold_strategy(ou_problem.model, ou_problem.reward, ThresholdStrategy(1.0), 0.0)


# schedule -----------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(m=0.0), dict(m=1.0, exponent=0.5), dict(m=1.0, initial_explorations=-1),
                                dict(m=1.0, trigger_factor=0.9)])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        ExplorationSchedule(**kw)


def test_schedule_rule():
    s = ExplorationSchedule(1.0, initial_explorations=2, trigger_factor=1.0)
    assert s.explore(100.0, 50.0, 0) and s.explore(100.0, 50.0, 1)
    assert s.explore(1000.0, 99.0, 5) and not s.explore(1000.0, 100.0, 5)
    assert s.explore(5.0, 0.0, 9)


def test_estimator_config_bandwidth():
    assert EstimatorConfig().bandwidth(400.0) == pytest.approx(0.05)
    assert EstimatorConfig(h_rule=0.1).bandwidth(400.0) == 0.1
    for bad in ("wide", -1.0):
        with pytest.raises(ValueError):
            EstimatorConfig(h_rule=bad).bandwidth(1.0)


# limiting schedules ----------------------------------------------------------

def test_all_exploration_has_no_reward(ou_problem, ou_solution):
    m, r = ou_problem.model, ou_problem.reward
    run = run_data_driven(m, r, ExplorationSchedule(1e9), T=200.0, seed=3)
    assert run.interventions == [] and run.total_reward == 0.0
    assert run.S_T == pytest.approx(200.0)
    assert regret(m, r, run) == pytest.approx(ou_solution.phi, rel=1e-12)
    validate_run(run, r)


def test_single_exploration_then_frozen_threshold(ou_problem):
    m, r = ou_problem.model, ou_problem.reward
    T = 3000.0
    run = run_data_driven(m, r, ExplorationSchedule(1e-9), T=T, seed=8)
    assert len(run.exploration_segments) == 1
    ys = {y for _, y in run.threshold_history}
    assert len(ys) == 1
    y1 = ys.pop()
    seg = run.exploration_segments[0]
    # renewal CI for the exploitation phase
    ts = np.array([seg.t_end] + [iv.t for iv in run.interventions])
    gaps = np.diff(ts)
    n = gaps.size
    tail = T - seg.t_end
    rate = sum(iv.reward for iv in run.interventions) / tail
    g = r.g(y1)
    se = g * gaps.std(ddof=1) / gaps.mean() ** 1.5 / math.sqrt(tail)
    assert n > 100
    assert abs(rate - reward_rate_of_threshold(m, r, y1)) < 4 * se + g / tail


# exploration clock --------------------------------------------------------------

def test_exploration_clock_sandwich(dd_run):
    sched = ExplorationSchedule(M)
    cps = dd_run.exploration_checkpoints
    L = max(s.t_end - s.t_start for s in dd_run.exploration_segments)
    periods = {round(t, 9) for t, _ in dd_run.threshold_history}
    for t, s in cps[:-1]:
        assert s <= t + 1e-9
        if t > 0 and round(t, 9) in periods:
            assert s >= sched.trigger_factor * M * t ** (2 / 3)  # exploited: clock above the trigger
        assert s <= sched.trigger_factor * M * t ** (2 / 3) + L + 1e-9
    assert dd_run.S_T == cps[-1][1]


def test_segments_consistent_with_record(dd_run):
    segs = dd_run.exploration_segments
    assert sum(s.n_record for s in segs) == dd_run.record.size
    total = sum(s.t_end - s.t_start for s in segs)
    assert dd_run.S_T == pytest.approx(total, abs=1e-6)
    for s in segs[:-1]:
        assert s.t_start < s.t_beta < s.t_end
    # each segment starts at y0 and reaches beta
    start = 0
    for s in segs:
        chunk = dd_run.record[start:start + s.n_record]
        assert chunk[0] == 0.0 and chunk.max() >= 1.5 - 0.5
        start += s.n_record


def test_dd_run_admissible(ou_problem, dd_run):
    assert validate_run(dd_run, ou_problem.reward)
    assert len(dd_run.interventions) > 50


def test_explore_cap(ou_problem):
    with pytest.raises(RunawayExplorationError):
        run_data_driven(ou_problem.model, ou_problem.reward, ExplorationSchedule(M), T=500.0, seed=2,
                        explore_cap=0.01)


def test_data_driven_is_deterministic(ou_problem):
    a = run_data_driven(ou_problem.model, ou_problem.reward, ExplorationSchedule(M), T=300.0, seed=5)
    b = run_data_driven(ou_problem.model, ou_problem.reward, ExplorationSchedule(M), T=300.0, seed=5)
    assert a.to_json() == b.to_json()


# validation negatives -----------------------------------------------------------

def _tamper(run, **kw):
    d = run.to_dict()
    for k, fn in kw.items():
        d[k] = fn(d[k])
    return ControlledRun.from_dict(d)


def test_validate_rejects_tampered(ou_problem, dd_run):
    r = ou_problem.reward
    ivs = lambda f: lambda xs: f([dict(x) for x in xs])  # noqa: E731

    def swap(xs):
        xs[0], xs[1] = xs[1], xs[0]
        return xs

    def low(xs):
        xs[3]["x_pre"] -= 0.1
        xs[3]["reward"] = float(r.g(xs[3]["x_pre"]))
        return xs

    def dup(xs):
        extra = dict(xs[2])
        extra["t"] += 1e-6
        return xs[:3] + [extra] + xs[3:]

    def rich(xs):
        xs[0]["reward"] += 1.0
        return xs

    def in_explore(xs):
        seg = dd_run.exploration_segments[1]
        return sorted(xs + [{"t": seg.t_start + 0.5 * (seg.t_beta - seg.t_start), "x_pre": 1.5,
                             "reward": 1.0, "kind": "exploitation"}], key=lambda v: v["t"])

    for f in (swap, low, dup, rich, in_explore):
        with pytest.raises(RunValidationError):
            validate_run(_tamper(dd_run, interventions=ivs(f)), r)

    def clock(xs):
        xs = [dict(x) for x in xs]
        xs[2]["S_t"] = xs[1]["S_t"] - 1.0
        return xs

    with pytest.raises(RunValidationError):
        validate_run(_tamper(dd_run, exploration_checkpoints=clock), r)


# serialisation ------------------------------------------------------------

def test_json_round_trip(tmp_path, dd_run):
    f = tmp_path / "run.json"
    dd_run.save(f)
    back = ControlledRun.load(f)
    assert back.to_json() == dd_run.to_json()
    assert back.interventions == dd_run.interventions
    d = json.loads(f.read_text())
    assert set(d) == {"run_meta", "interventions", "threshold_history", "exploration_checkpoints",
                      "exploration_segments"}
    assert d["run_meta"]["estimator"]["inner"] == "full"


# threshold runs ------------------------------------------------------------

@pytest.mark.parametrize("bridge", [True, False])
def test_sweep_single_level_identity(ou_problem, bridge):
    m, r = ou_problem.model, ou_problem.reward
    for y in (0.7, 1.2):
        run = run_threshold_strategy(m, r, ThresholdStrategy(y), 300.0, seed=13, bridge=bridge)
        rate = threshold_sweep_rates(m, r, [y], 300.0, seed=13, bridge=bridge)
        assert rate[0] == pytest.approx(average_reward(run), rel=1e-12, abs=1e-15)


def test_sweep_top_level_identity(ou_problem):
    # the top level of a sweep runs the same excursions as a lone threshold run
    m, r = ou_problem.model, ou_problem.reward
    ys = np.linspace(0.5, 1.0, 33)
    rates = threshold_sweep_rates(m, r, ys, 300.0, seed=13)
    run = run_threshold_strategy(m, r, ThresholdStrategy(1.0), 300.0, seed=13)
    assert rates[-1] == pytest.approx(average_reward(run), rel=1e-12)
    with pytest.raises(ValueError):
        threshold_sweep_rates(m, r, ys[::-1], 10.0)


def test_prefix_invariance(ou_problem):
    m, r = ou_problem.model, ou_problem.reward
    short = run_threshold_strategy(m, r, ThresholdStrategy(1.0), 100.0, seed=4)
    long = run_threshold_strategy(m, r, ThresholdStrategy(1.0), 200.0, seed=4)
    assert long.interventions[:len(short.interventions)] == short.interventions
    assert sum(iv.reward for iv in long.interventions if iv.t <= 100.0) / 100.0 == average_reward(short)


def test_threshold_run_matches_rate(ou_problem):
    m, r = ou_problem.model, ou_problem.reward
    T = 4000.0
    rates = [average_reward(run_threshold_strategy(m, r, ThresholdStrategy(1.5), T, seed=derive_seed(6, i)))
             for i in range(4)]
    mu, se = np.mean(rates), np.std(rates, ddof=1) / 2
    assert abs(mu - reward_rate_of_threshold(m, r, 1.5)) < 4 * se + 1e-3


def test_cap_is_suboptimal(ou_problem, ou_solution):
    m, r = ou_problem.model, ou_problem.reward
    assert reward_rate_of_threshold(m, r, r.beta) < ou_solution.phi
    assert reward_rate_of_threshold(m, r, r.y1) < ou_solution.phi


@pytest.mark.slow
def test_data_driven_beats_harvest_at_cap(ou_problem):
    m, r = ou_problem.model, ou_problem.reward
    diffs = []
    for i in range(5):
        s = derive_seed(99, i)
        dd = run_data_driven(m, r, ExplorationSchedule(M), T=1e4, seed=s)
        naive = run_threshold_strategy(m, r, ThresholdStrategy(r.beta), 1e4, seed=s)
        diffs.append(average_reward(dd) - average_reward(naive))
    assert all(d > 0 for d in diffs)


def test_config_echoed(dd_run):
    assert dd_run.run_meta["schedule"] == dataclasses.asdict(ExplorationSchedule(M))
