import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from impulselab.functions import FunctionSpec as F


def test_builtin_values():
    x = np.array([-2.0, 0.0, 0.5, 3.0])
    np.testing.assert_allclose(F.ou(2.0, 0.5)(x), -2.0 * (x - 0.5))
    np.testing.assert_allclose(F.tanh(1.5, 0.5, 0.1)(x), -1.5 * np.tanh((x - 0.1) / 0.5))
    np.testing.assert_allclose(F.pwlin(0.5, 2.0)(x), np.where(x < 0, -0.5 * x, -2.0 * x))
    np.testing.assert_allclose(F.poly(1.0, 0.0, -3.0)(x), 1.0 - 3.0 * x**2)
    np.testing.assert_allclose(F.capped_linear(1.5, 0.5)(x), np.minimum(x, 1.5) - 0.5)
    sat = F.saturating(2.0, 0.3, 1.0, 2.0, 0.0)(x)
    np.testing.assert_allclose(sat, 1.0 - np.exp(-2.0 * np.minimum(x, 2.0)) - 0.3)


def test_scalar_in_scalar_out():
    v = F.ou(1.0, 0.0)(0.25)
    assert isinstance(v, float) and v == -0.25


def test_scale():
    f = F.ou(1.0, 0.0).scaled(3.0)
    assert f(1.0) == -3.0
    assert "3*" in str(f)


def test_table_extends_constantly():
    t = F.table([0.0, 1.0, 2.0], [1.0, 3.0, 2.0])
    assert t(-5.0) == 1.0 and t(9.0) == 2.0
    assert t(0.5) == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=12, unique=True),
       st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=12, max_size=12),
       st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=20))
def test_table_matches_interp(xs, ys, q):
    xs = np.sort(np.array(xs))
    if np.any(np.diff(xs) < 1e-9):
        return
    ys = np.array(ys[:xs.size])
    got = F.table(xs, ys)(np.array(q))
    np.testing.assert_allclose(got, np.interp(q, xs, ys), rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("bad", [
    lambda: F("nope", ()),
    lambda: F("ou", (1.0,)),
    lambda: F.table([0.0, 0.0], [1.0, 2.0]),
    lambda: F.tanh(1.0, 0.0),
    lambda: F.ou(math.inf, 0.0),
    lambda: F("poly", ()),
])
def test_rejects_malformed(bad):
    with pytest.raises(ValueError):
        bad()


@pytest.mark.parametrize("spec", [F.ou(1.0, 0.2), F.table([0, 1], [2, 3]).scaled(2.0), F.constant(1.0)])
def test_dict_round_trip(spec):
    assert F.from_dict(spec.to_dict()) == spec
