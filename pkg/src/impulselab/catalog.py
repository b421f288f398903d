"""Named example problems.

``ou``      Ornstein-Uhlenbeck ``b(x) = -x``, unit noise, ``g(y) = min(y, 1.5) - 0.5``.
``ou_wide`` same model with the cap at 3 (long first-passage times).
``tanh``    bounded mean reversion ``b(x) = -tanh(2x)``.
``pwlin``   mean reversion with a kink, slopes 0.5 (left) and 2 (right).
"""
from .diffusion import DiffusionModel, DriftClassParams
from .functions import FunctionSpec as F
from .problem import Problem, RewardSpec

# run defaults shared by the catalog; m is per problem (about a fifth of
# early time goes to exploration)
BASE_SETTINGS = {"dt": 1e-3, "seed": 0, "a": 1e-3, "grid_n": 512, "kernel": "epanechnikov",
                 "h_rule": "inv_sqrt", "inner": "full", "bridge": True, "trigger_factor": 1.25,
                 "initial_explorations": 1}


def _ou():
    model = DiffusionModel(F.ou(1.0, 0.0), F.constant(1.0), DriftClassParams(1.0, 1.0, 0.5, 1.0, 1.0), "ou")
    return model, RewardSpec.capped_linear(0.5, 0.0, 1.5), {"m": 2.5, "T": 1e4}


def _ou_wide():
    model = DiffusionModel(F.ou(1.0, 0.0), F.constant(1.0), DriftClassParams(1.0, 1.0, 0.5, 1.0, 1.0), "ou_wide")
    return model, RewardSpec.capped_linear(0.5, 0.0, 3.0), {"m": 2.5, "T": 1e5}


def _tanh():
    model = DiffusionModel(F.tanh(1.0, 0.5), F.constant(1.0), DriftClassParams(1.0, 1.0, 0.9, 1.0, 1.0), "tanh")
    return model, RewardSpec.capped_linear(0.5, 0.0, 1.5), {"m": 2.5, "T": 1e4}


def _pwlin():
    model = DiffusionModel(F.pwlin(0.5, 2.0), F.constant(1.0), DriftClassParams(2.0, 1.0, 0.5, 1.0, 1.0), "pwlin")
    return model, RewardSpec.capped_linear(0.3, 0.0, 1.0), {"m": 2.5, "T": 1e4}


_BUILDERS = {"ou": _ou, "ou_wide": _ou_wide, "tanh": _tanh, "pwlin": _pwlin}
NAMES = tuple(_BUILDERS)


def get_problem(name, with_bounds=True):
    """Catalog problem by name; ``M1``/``M2`` filled from the oracle."""
    try:
        model, reward, extra = _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown catalog problem {name!r}; known: {', '.join(NAMES)}") from None
    if with_bounds:
        reward = reward.with_default_bounds(model)
    return Problem(model, reward, {**BASE_SETTINGS, **extra}, name)


def problem_to_toml(problem):
    """Flat key/value text accepted by :func:`impulselab.problem.load_problem`."""
    lines = []

    def put(k, v):
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, str):
            s = '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(v, (list, tuple)):
            s = "[" + ", ".join(repr(float(x)) for x in v) + "]"
        else:
            s = repr(v)
        lines.append(f"{k} = {s}")

    m, r = problem.model, problem.reward
    if problem.name:
        put("name", problem.name)
    cp = m.class_params
    for k, v in (("C", cp.lin_growth_C), ("A", cp.recurrence_A), ("gamma", cp.recurrence_gamma),
                 ("sigma_lower", cp.sigma_lower), ("sigma_upper", cp.sigma_upper)):
        put(k, float(v))
    for key, spec in (("drift", m.drift), ("sigma", m.sigma), ("reward", r.g)):
        put(key, spec.kind)
        if spec.kind == "table":
            n = int(spec.params[0])
            put(f"{key}_table_x", spec.params[1:1 + n])
            put(f"{key}_table_y", spec.params[1 + n:])
        else:
            put(f"{key}_params", spec.params)
        if spec.scale != 1.0:
            put(f"{key}_scale", spec.scale)
    for k in ("y0", "y1", "beta", "M1", "M2"):
        v = getattr(r, k)
        if v is not None:
            put(k, float(v))
    for k, v in problem.settings.items():
        put(k, v)
    return "\n".join(lines) + "\n"
