"""Real-valued function descriptors usable from jitted kernels.

A :class:`FunctionSpec` is a named parametric family (or a table with linear
interpolation) plus a positive scale. Drift, diffusion coefficient and reward
functions are all described this way so that the simulation kernels can
evaluate them without Python callbacks.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K
from ._backend import USE_NUMBA

KINDS = {
    "poly": K.POLY,
    "ou": K.OU,
    "tanh": K.TANH,
    "pwlin": K.PWLIN,
    "table": K.TABLE,
    "capped_linear": K.CAPPED_LINEAR,
    "saturating": K.SATURATING,
}

_NPARAMS = {"ou": 2, "tanh": 3, "pwlin": 3, "capped_linear": 2, "saturating": 5}


def _eval_np(kind, p, x):
    if kind == "poly":
        return np.polynomial.polynomial.polyval(x, p) + 0.0 * x
    if kind == "ou":
        return -p[0] * (x - p[1])
    if kind == "tanh":
        return -p[0] * np.tanh((x - p[2]) / p[1])
    if kind == "pwlin":
        d = x - p[2]
        return np.where(d < 0.0, -p[0] * d, -p[1] * d)
    if kind == "table":
        n = int(p[0])
        return np.interp(x, p[1:1 + n], p[1 + n:1 + 2 * n])
    if kind == "capped_linear":
        return np.minimum(x, p[0]) - p[1]
    if kind == "saturating":
        return p[2] * (1.0 - np.exp(-p[3] * (np.minimum(x, p[0]) - p[4]))) - p[1]
    raise ValueError(f"unknown function kind {kind!r}")


@dataclass(frozen=True)
class FunctionSpec:
    """Descriptor ``x -> scale * f_kind(x; params)``.

    Builtin kinds (parameters in order):

    ``poly``           c0, c1, ... (ascending coefficients)
    ``ou``             theta, mu            -> -theta (x - mu)
    ``tanh``           k, width, center     -> -k tanh((x - center) / width)
    ``pwlin``          k_left, k_right, center (mean reversion with a kink)
    ``table``          packed n, x_0..x_{n-1}, y_0..y_{n-1}; linear
                       interpolation, constant beyond the end points
    ``capped_linear``  cap, cost            -> min(x, cap) - cost
    ``saturating``     cap, cost, height, rate, base
                       -> height (1 - exp(-rate (min(x, cap) - base))) - cost
    """

    kind: str
    params: tuple = ()
    scale: float = 1.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}")
        params = tuple(float(v) for v in np.atleast_1d(np.asarray(self.params, dtype=float)))
        object.__setattr__(self, "params", params)
        need = _NPARAMS.get(self.kind)
        if need is not None and len(params) != need:
            raise ValueError(f"{self.kind} takes {need} parameters, got {len(params)}")
        if self.kind == "poly" and not params:
            raise ValueError("poly needs at least one coefficient")
        if self.kind == "table":
            n = int(params[0]) if params else 0
            if n < 2 or len(params) != 1 + 2 * n:
                raise ValueError("malformed table descriptor")
            xs = np.asarray(params[1:1 + n])
            if np.any(np.diff(xs) <= 0):
                raise ValueError("table abscissae must be strictly increasing")
        if self.kind == "tanh" and params[1] <= 0:
            raise ValueError("tanh width must be positive")
        if not np.all(np.isfinite(params)) or not np.isfinite(self.scale):
            raise ValueError("non-finite parameter in function descriptor")

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, c):
        return cls("poly", (c,))

    @classmethod
    def poly(cls, *coeffs):
        return cls("poly", coeffs)

    @classmethod
    def ou(cls, theta=1.0, mu=0.0):
        return cls("ou", (theta, mu))

    @classmethod
    def tanh(cls, k, width=1.0, center=0.0):
        return cls("tanh", (k, width, center))

    @classmethod
    def pwlin(cls, k_left, k_right, center=0.0):
        return cls("pwlin", (k_left, k_right, center))

    @classmethod
    def table(cls, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValueError("table needs matching 1-d abscissae and values")
        return cls("table", np.concatenate([[xs.size], xs, ys]))

    @classmethod
    def capped_linear(cls, cap, cost):
        return cls("capped_linear", (cap, cost))

    @classmethod
    def saturating(cls, cap, cost, height, rate, base=0.0):
        return cls("saturating", (cap, cost, height, rate, base))

    # evaluation ---------------------------------------------------------
    @cached_property
    def packed(self):
        """``(kind_code, params_array, scale)`` as consumed by the kernels."""
        return KINDS[self.kind], np.asarray(self.params, dtype=float), float(self.scale)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if USE_NUMBA:
            code, p, sc = self.packed
            flat = K.feval_array(code, p, sc, np.ascontiguousarray(x.ravel()))
            out = flat.reshape(x.shape)
        else:
            out = self.scale * _eval_np(self.kind, self.packed[1], x)
        return out if out.ndim else float(out)

    def scaled(self, c):
        return FunctionSpec(self.kind, self.params, self.scale * float(c), self.label)

    # serialisation ------------------------------------------------------
    def to_dict(self):
        d = {"kind": self.kind, "params": list(self.params), "scale": self.scale}
        if self.kind == "table":
            n = int(self.params[0])
            d = {"kind": "table", "x": list(self.params[1:1 + n]),
                 "y": list(self.params[1 + n:]), "scale": self.scale}
        return d

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "table":
            spec = cls.table(d["x"], d["y"])
        else:
            spec = cls(d["kind"], tuple(d.get("params", ())))
        return spec.scaled(d.get("scale", 1.0))

    def __str__(self):
        if self.kind == "table":
            return f"table[{int(self.params[0])}]"
        args = ", ".join(f"{p:g}" for p in self.params)
        s = f"{self.kind}({args})"
        return s if self.scale == 1.0 else f"{self.scale:g}*{s}"
