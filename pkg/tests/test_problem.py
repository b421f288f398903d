import math

import numpy as np
import pytest
from scipy import integrate, special

from impulselab import catalog
from impulselab.diffusion import DiffusionModel, DriftClassParams
from impulselab.functions import FunctionSpec as F
from impulselab.problem import (KNOWN_KEYS, ClassMembershipError, ProblemFileError, RewardSpec,
                                RewardSpecError, break_even_level, load_problem, problem_from_mapping,
                                reward_rate_of_threshold, solve_oracle, threshold_grid)


def ou_xi(x):
    return integrate.quad(lambda y: math.sqrt(math.pi) * math.exp(y * y) * (1 + special.erf(y)),
                          0.0, x, epsabs=0, epsrel=1e-12)[0]


# reward spec ----------------------------------------------------------------

def test_capped_linear_anchors():
    r = RewardSpec.capped_linear(0.5, 0.0, 1.5)
    assert (r.y0, r.y1, r.beta) == (0.0, 0.5, 1.5)
    assert r.reward(0.0) == 0.0 and r.reward(1e-9) < 0 and r.reward(2.0) == 1.0


@pytest.mark.parametrize("kw", [
    dict(g=F.capped_linear(1.5, 0.5), y0=0.0, y1=0.5, beta=0.4),          # order
    dict(g=F.capped_linear(1.5, -0.1), y0=0.0, y1=0.5, beta=1.5),         # no fixed cost
    dict(g=F.capped_linear(1.5, 0.5), y0=0.0, y1=0.3, beta=1.5),          # g(y1) < 0
    dict(g=F.capped_linear(1.5, 0.5), y0=0.0, y1=0.9, beta=1.5),          # positive below y1
    dict(g=F.poly(-0.5, 1.0), y0=0.0, y1=0.5, beta=1.5),                   # grows past beta
    dict(g=F.capped_linear(1.5, 0.5), y0=0.0, y1=0.5, beta=1.5, M1=1.0),  # one bound only
    dict(g=F.capped_linear(1.5, 0.5), y0=0.0, y1=0.5, beta=1.5, M1=3.0, M2=2.0),
])
def test_reward_spec_rejects(kw):
    with pytest.raises(RewardSpecError):
        RewardSpec(**kw)


def test_break_even_level():
    assert break_even_level(F.capped_linear(2.0, 0.7), 0.0, 2.0) == pytest.approx(0.7, abs=1e-12)


def test_default_bounds(ou_problem):
    r, o = ou_problem.reward, ou_problem.model.oracle
    assert r.M1 == pytest.approx(0.5 * o.xi(0.0, r.y1))
    assert r.M2 == pytest.approx(2.0 * o.xi(0.0, r.beta))
    xi = o.xi(0.0, threshold_grid(r))
    assert np.all((r.M1 <= xi) & (xi <= r.M2))


# oracle ---------------------------------------------------------------------

def test_oracle_against_independent_grid():
    p = catalog.get_problem("ou_wide")
    sol = solve_oracle(p.model, p.reward)
    ys = np.linspace(0.5, 3.0, 512)
    rates = np.array([(min(y, 3.0) - 0.5) / ou_xi(y) for y in ys])
    k = int(np.argmax(rates))
    cell = ys[1] - ys[0]
    assert abs(sol.y_star - ys[k]) <= cell
    assert sol.phi == pytest.approx(rates[k], abs=1e-4)
    assert 0.5 < sol.y_star < 3.0  # interior maximum


def test_oracle_ou_regression(ou_solution):
    # cross-checked against the independent quadrature above
    ys = ou_solution.grid
    rates = np.array([(min(y, 1.5) - 0.5) / ou_xi(y) for y in ys])
    np.testing.assert_allclose(ou_solution.profile, rates, rtol=1e-8)
    assert ou_solution.y_star == ys[int(np.argmax(rates))]


def test_rate_at_break_even_is_zero(ou_problem, ou_solution):
    assert reward_rate_of_threshold(ou_problem.model, ou_problem.reward, ou_problem.reward.y1) == 0.0
    assert ou_solution.profile[0] == 0.0


def test_rate_domain(ou_problem):
    with pytest.raises(ValueError):
        reward_rate_of_threshold(ou_problem.model, ou_problem.reward, 0.2)
    with pytest.raises(ValueError):
        reward_rate_of_threshold(ou_problem.model, ou_problem.reward, 1.6)


def test_grid_max_is_exact_lookup(ou_problem, ou_solution):
    assert ou_solution.phi == ou_solution.profile.max()
    assert ou_solution.rate_at(ou_solution.y_star) == ou_solution.phi
    assert reward_rate_of_threshold(ou_problem.model, ou_problem.reward, ou_solution.y_star) == \
        pytest.approx(ou_solution.phi, rel=1e-12)
    with pytest.raises(ValueError):
        ou_solution.rate_at(0.5 + 1e-3)


def test_argmax_stable_under_refinement(ou_problem, ou_solution):
    fine = solve_oracle(ou_problem.model, ou_problem.reward, grid_n=4096)
    cell = ou_solution.grid[1] - ou_solution.grid[0]
    assert abs(fine.y_star - ou_solution.y_star) <= cell
    assert fine.phi >= ou_solution.phi - 1e-12
    assert fine.phi - ou_solution.phi < 1e-5


def test_smallest_threshold_wins_ties():
    # flat g/xi region cannot occur for smooth models; use a constant profile
    m = DiffusionModel(F.constant(0.0), F.constant(1.0), DriftClassParams(1, 1, 0.5, 1, 1))
    r = RewardSpec.capped_linear(0.5, 0.0, 1.5)
    sol = solve_oracle(m, r, grid_n=8, validate=False)
    assert sol.y_star == sol.grid[int(np.argmax(sol.profile))]


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_reward_scaling(ou_problem, ou_solution, c):
    sol = solve_oracle(ou_problem.model, ou_problem.reward.scaled(c))
    assert sol.y_star == ou_solution.y_star
    assert sol.phi == pytest.approx(c * ou_solution.phi, rel=1e-12)


@pytest.mark.parametrize("c", [0.5, 4.0])
def test_time_scaling(ou_problem, ou_solution, c):
    # b -> c b, sigma -> sqrt(c) sigma runs the same process c times faster
    m = ou_problem.model
    fast = DiffusionModel(m.drift.scaled(c), m.sigma.scaled(math.sqrt(c)),
                          DriftClassParams(max(c, 1.0), 1.0, 0.5 * c, math.sqrt(c), math.sqrt(c)))
    sol = solve_oracle(fast, ou_problem.reward, validate=False)
    assert abs(sol.y_star - ou_solution.y_star) <= 1e-9
    assert sol.phi == pytest.approx(c * ou_solution.phi, rel=1e-7)


def test_outward_drift_rejected():
    m = DiffusionModel(F.ou(-1.0, 0.0), F.constant(1.0), DriftClassParams(1, 1, 0.5, 1, 1))
    with pytest.raises(ClassMembershipError):
        solve_oracle(m, RewardSpec.capped_linear(0.5, 0.0, 1.5))


# problem files -------------------------------------------------------------

@pytest.mark.parametrize("name", catalog.NAMES)
def test_shipped_files_match_catalog(name, request):
    root = request.config.rootpath
    p = load_problem(root / "problems" / f"{name}.toml")
    c = catalog.get_problem(name, with_bounds=False)
    assert p.model.drift == c.model.drift and p.reward == c.reward
    assert p.settings == c.settings


def test_toml_round_trip(tmp_path, ou_problem):
    f = tmp_path / "p.toml"
    f.write_text(catalog.problem_to_toml(ou_problem))
    q = load_problem(f)
    assert q.reward == ou_problem.reward and q.model.sigma == ou_problem.model.sigma
    assert q.settings == ou_problem.settings


def _base():
    return {"drift": "ou", "drift_params": [1.0, 0.0], "sigma": "constant", "sigma_params": [1.0],
            "reward": "capped_linear", "reward_params": [1.5, 0.5], "beta": 1.5}


def test_mapping_defaults_y1_to_break_even():
    p = problem_from_mapping(_base())
    assert p.reward.y1 == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("patch,needle", [
    ({"colour": 1}, "unknown"),
    ({"T": {"a": 1}}, "nested"),
    ({"drift_params": None}, "drift_params"),
    ({"beta": 0.2}, "not positive"),
])
def test_mapping_errors(patch, needle):
    d = _base()
    d.update(patch)
    d = {k: v for k, v in d.items() if v is not None}
    with pytest.raises(ProblemFileError, match=needle):
        problem_from_mapping(d)


def test_missing_beta():
    d = _base()
    del d["beta"]
    with pytest.raises(ProblemFileError, match="beta"):
        problem_from_mapping(d)


def test_bad_toml(tmp_path):
    f = tmp_path / "bad.toml"
    f.write_text("beta = = 1")
    with pytest.raises(ProblemFileError):
        load_problem(f)


def test_overrides_apply_and_are_checked():
    p = problem_from_mapping(_base(), {"T": 50.0, "seed": 3})
    assert p.settings["T"] == 50.0 and p.settings["seed"] == 3
    with pytest.raises(ProblemFileError):
        problem_from_mapping(_base(), {"bogus": 1})
    assert "T" in KNOWN_KEYS
