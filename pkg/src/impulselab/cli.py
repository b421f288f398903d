"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 model/reward validation failure,
3 runtime failure. Failures print one ``error=<kind> code=<n> message=<json>``
line to stderr; results go to stdout as ``key=value`` pairs.
"""
import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .bench import ExperimentError, ExperimentPlan, PIPELINES, THREADS_ENV, default_workers, \
    resolve_problem, run_experiment
from .control import (EstimatorConfig, ExplorationSchedule, RunawayExplorationError, ThresholdStrategy,
                      average_reward, run_data_driven, run_threshold_strategy)
from .diffusion import DEFAULT_DT, InvalidModelError, OracleError, SamplePath, SimulationBlowUp, \
    simulate_path
from .estimation import (KernelDensityEstimate, KernelSpecError, LocalTimeDensityEstimate, build_xi_estimate,
                         default_eps, estimate_threshold, get_kernel, default_bandwidth, threshold_profile)
from .problem import (ClassMembershipError, ProblemFileError, RewardSpecError,
                      reward_rate_of_threshold, solve_oracle)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

_VALIDATION = (ProblemFileError, RewardSpecError, ClassMembershipError, InvalidModelError, KernelSpecError)
_RUNTIME = (SimulationBlowUp, OracleError, RunawayExplorationError, ExperimentError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit(**kv):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()))


def _diag(kind, code, message):
    msg = " ".join(str(message).split())
    print(f"error={kind} code={code} message={json.dumps(msg)}", file=sys.stderr)
    return code


def _positive(typ):
    def conv(s):
        try:
            v = typ(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {typ.__name__} value {s!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s!r}")
        return v
    return conv


def _nonneg_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value {s!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser():
    p = _Parser(prog="impulselab", description="Impulse control of a scalar diffusion: oracle, "
                "estimation, data-driven strategy and rate benchmarks.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, need_problem=True):
        sp.add_argument("--problem", required=need_problem,
                        help="problem file (TOML key/value) or catalog name")
        sp.add_argument("--output", "-o")
        sp.add_argument("--grid-n", type=_positive(int), dest="grid_n")

    sp = sub.add_parser("solve", help="oracle solution (Phi, y*) and profile CSV")
    common(sp)

    sp = sub.add_parser("simulate", help="simulate an uncontrolled path")
    common(sp)
    sp.add_argument("--T", type=_positive(float))
    sp.add_argument("--dt", type=_positive(float))
    sp.add_argument("--seed", type=_nonneg_int)
    sp.add_argument("--x0", type=float)

    sp = sub.add_parser("estimate", help="plug-in estimates from a stored path")
    common(sp)
    sp.add_argument("--path", required=True)
    sp.add_argument("--estimator", choices=("kernel", "local_time"), default="kernel")
    sp.add_argument("--kernel")
    sp.add_argument("--h", type=_positive(float), help="bandwidth (default T^-1/2)")
    sp.add_argument("--eps", type=_positive(float), help="local-time band")
    sp.add_argument("--a", type=_positive(float))
    sp.add_argument("--M1", type=_positive(float))
    sp.add_argument("--inner", choices=("y0", "full"))

    sp = sub.add_parser("control", help="controlled run (data-driven or fixed threshold)")
    common(sp)
    sp.add_argument("--strategy", choices=("data_driven", "threshold", "oracle"), default="data_driven")
    sp.add_argument("--y-cut", type=float, dest="y_cut")
    sp.add_argument("--T", type=_positive(float))
    sp.add_argument("--dt", type=_positive(float))
    sp.add_argument("--seed", type=_nonneg_int)
    sp.add_argument("--m", type=_positive(float))
    sp.add_argument("--a", type=_positive(float))
    sp.add_argument("--M1", type=_positive(float))
    sp.add_argument("--h-rule", dest="h_rule", help="inv_sqrt (h = S^-1/2) or a fixed bandwidth")
    sp.add_argument("--initial-explorations", type=_nonneg_int, dest="initial_explorations")

    sp = sub.add_parser("bench", help="rate experiment over horizons and seeds")
    common(sp)
    sp.add_argument("--pipeline", choices=PIPELINES, required=True)
    sp.add_argument("--horizons", required=True, help="comma-separated increasing T values")
    sp.add_argument("--reps", type=_positive(int), default=10)
    sp.add_argument("--seed", type=_nonneg_int, default=0)
    sp.add_argument("--workers", type=_positive(int), help=f"default from ${THREADS_ENV} or 1")
    sp.add_argument("--dt", type=_positive(float))
    sp.add_argument("--m", type=_positive(float))
    return p


_OVERRIDE_KEYS = ("T", "dt", "seed", "m", "a", "grid_n", "h_rule", "initial_explorations")


def _load(args):
    overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS if getattr(args, k, None) is not None}
    if not os.path.exists(args.problem) and args.problem.endswith(".toml"):
        raise UsageError(f"problem file not found: {args.problem}")
    try:
        prob = resolve_problem(args.problem, overrides)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    M1 = getattr(args, "M1", None)
    if M1 is not None:
        if M1 > prob.reward.M2:
            raise RewardSpecError(f"M1={M1} exceeds M2={prob.reward.M2}")
        prob = replace(prob, reward=replace(prob.reward, M1=M1))
    return prob


def _effective(prob, args, **extra):
    # output locations are left out so reruns into other files stay byte-identical
    cfg = {k: v for k, v in vars(args).items() if v is not None and k not in ("verbose", "output")}
    return {"command": cfg.pop("command"), "flags": cfg, "problem": prob.to_dict(), **extra}


def _write_meta(path, meta):
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True, default=str)


def _write_table(path, cols):
    names = list(cols)
    rows = zip(*(np.asarray(cols[n]) for n in names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def cmd_solve(args):
    prob = _load(args)
    grid_n = int(prob.settings.get("grid_n", 512))
    sol = solve_oracle(prob.model, prob.reward, grid_n, validate=False)
    out = args.output or "profile.csv"
    xi = prob.model.oracle.xi(prob.reward.y0, sol.grid)
    _write_table(out, {"x": sol.grid, "rho": prob.model.oracle.density(sol.grid), "xi": xi,
                       "g_over_xi": sol.profile})
    _write_meta(out, _effective(prob, args, phi=sol.phi, y_star=sol.y_star))
    emit(phi=sol.phi, y_star=sol.y_star, M1=prob.reward.M1, M2=prob.reward.M2, profile=out)


def cmd_simulate(args):
    prob = _load(args)
    s = prob.settings
    T = float(s.get("T", 1000.0))
    dt = float(s.get("dt", DEFAULT_DT))
    if dt > T:
        raise UsageError("dt must not exceed T")
    seed = int(s.get("seed", 0))
    x0 = prob.reward.y0 if args.x0 is None else args.x0
    path = simulate_path(prob.model, x0, T, dt, seed)
    out = args.output or "path.bin"
    path.save(out)
    _write_meta(out, _effective(prob, args, T=T, dt=dt, seed=seed, x0=x0))
    emit(n=len(path), T=path.T, dt=dt, seed=seed, path=out)


def cmd_estimate(args):
    prob = _load(args)
    if not os.path.exists(args.path):
        raise UsageError(f"path file not found: {args.path}")
    try:
        path = SamplePath.load(args.path)
    except (ValueError, KeyError) as exc:
        raise ProblemFileError(f"unreadable path file: {exc}") from exc
    s, r = prob.settings, prob.reward
    inner = args.inner or s.get("inner", "full")
    if args.estimator == "kernel":
        h = args.h or default_bandwidth(path.T)
        dens = KernelDensityEstimate(path, get_kernel(args.kernel or s.get("kernel", "epanechnikov")), h)
        width = {"h": h}
    else:
        eps = args.eps or default_eps(path.dt, prob.model.class_params.sigma_upper)
        dens = LocalTimeDensityEstimate(path, eps, prob.model.sigma)
        width = {"eps": eps}
    xi_hat = build_xi_estimate(dens, prob.model.sigma, r.y0, float(s.get("a", 1e-3)), r.M1, inner)
    grid_n = int(s.get("grid_n", 512))
    ys, xi, prof = threshold_profile(xi_hat, r, grid_n)
    y_hat, value_hat = estimate_threshold(xi_hat, r, grid_n)
    out = args.output or "estimate.csv"
    _write_table(out, {"x": ys, "rho_hat": dens(ys), "xi_hat": xi, "g_over_xi": prof})
    sol = solve_oracle(prob.model, r, grid_n, validate=False)
    regret = sol.phi - reward_rate_of_threshold(prob.model, r, y_hat)
    _write_meta(out, _effective(prob, args, y_hat=y_hat, value_hat=value_hat, path_T=path.T, **width))
    emit(y_hat=y_hat, value_hat=value_hat, **width, T=path.T, y_star=sol.y_star, regret=regret, table=out)


def cmd_control(args):
    prob = _load(args)
    s, r, m = prob.settings, prob.reward, prob.model
    T = float(s.get("T", 1e4))
    dt = float(s.get("dt", DEFAULT_DT))
    seed = int(s.get("seed", 0))
    bridge = bool(s.get("bridge", True))
    sol = solve_oracle(m, r, int(s.get("grid_n", 512)), validate=False)
    if args.strategy == "data_driven":
        sched = ExplorationSchedule(float(s.get("m", 2.5)),
                                    initial_explorations=int(s.get("initial_explorations", 1)),
                                    trigger_factor=float(s.get("trigger_factor", 1.25)))
        cfg = EstimatorConfig(kernel=s.get("kernel", "epanechnikov"), h_rule=str(s.get("h_rule", "inv_sqrt")),
                              a=float(s.get("a", 1e-3)), M1=r.M1, grid_n=int(s.get("grid_n", 512)),
                              inner=s.get("inner", "full"))
        run = run_data_driven(m, r, sched, cfg, T, dt, seed, bridge)
    else:
        y = sol.y_star if args.strategy == "oracle" else args.y_cut
        if y is None:
            raise UsageError("--strategy threshold needs --y-cut")
        run = run_threshold_strategy(m, r, ThresholdStrategy(y), T, dt, seed, bridge)
    run.run_meta["effective_config"] = _effective(prob, args)
    out = args.output or "run.json"
    run.save(out)
    rate = average_reward(run)
    emit(rate=rate, regret=sol.phi - rate, phi=sol.phi, n_interventions=len(run.interventions),
         S_T=run.S_T, run=out)


def cmd_bench(args):
    try:
        horizons = [float(v) for v in args.horizons.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --horizons {args.horizons!r}") from None
    overrides = {k: getattr(args, k) for k in ("dt", "m", "grid_n") if getattr(args, k, None) is not None}
    try:
        plan = ExperimentPlan(args.problem, horizons, args.reps, args.seed, args.pipeline,
                              args.output or "report.json", overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _load(argparse.Namespace(problem=args.problem, M1=None))
    rep = run_experiment(plan, workers=args.workers or default_workers())
    fit = rep.fit
    kv = {"pipeline": args.pipeline}
    if fit is not None:
        kv.update(slope=fit.slope, ci_low=fit.ci[0], ci_high=fit.ci[1])
    for T, mean, se in zip(rep.horizons, rep.mean_loss, rep.se):
        kv[f"mean_loss@{T:g}"] = mean
    kv["report"] = plan.output
    emit(**kv)


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "estimate": cmd_estimate,
            "control": cmd_control, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _diag("usage", EXIT_USAGE, exc)
    except _VALIDATION as exc:
        return _diag("validation", EXIT_VALIDATION, exc)
    except _RUNTIME as exc:
        return _diag("runtime", EXIT_RUNTIME, exc)
    except ValueError as exc:
        return _diag("validation", EXIT_VALIDATION, exc)
    except OSError as exc:
        return _diag("runtime", EXIT_RUNTIME, exc)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
