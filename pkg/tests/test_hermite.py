import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from shadow_merton.hermite import eval_at, eval_scalar, evaluate, locate

coef = st.lists(st.floats(-5, 5), min_size=6, max_size=6)
grids = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=12)


def _grid(widths):
    return np.concatenate([[-1.0], -1.0 + np.cumsum(widths)])


@given(coef, grids)
def test_reproduces_quintics(c, widths):
    x = _grid(widths)
    poly = np.polynomial.Polynomial(c)
    d1, d2 = poly.deriv(1), poly.deriv(2)
    xq = np.linspace(x[0], x[-1], 37)
    v, dv, ddv = evaluate(x, poly(x), d1(x), d2(x), xq, order=2)
    scale = 1 + np.max(np.abs(poly(xq)))
    np.testing.assert_allclose(v, poly(xq), atol=1e-9 * scale)
    np.testing.assert_allclose(dv, d1(xq), atol=1e-7 * scale)
    np.testing.assert_allclose(ddv, d2(xq), atol=1e-5 * scale)


@given(grids, st.floats(-2.0, 12.0), st.integers(0, 20))
def test_locate_matches_binary_search(widths, xq, guess):
    x = _grid(widths)
    expect = int(np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2))
    assert locate(x, xq, guess) == expect


@given(grids, st.floats(0.0, 1.0))
def test_scalar_kernel_matches_array_version(widths, frac):
    x = _grid(widths)
    y, d1, d2 = np.sin(x), np.cos(x), -np.sin(x)
    xq = x[0] + frac * (x[-1] - x[0])
    v, dv = eval_scalar(x, y, d1, d2, xq)
    va, dva = evaluate(x, y, d1, d2, xq)
    assert abs(v - va) <= 1e-13 and abs(dv - dva) <= 1e-11
    assert (v, dv) == eval_at(x, y, d1, d2, xq, locate(x, xq, 0))


def test_nodes_are_exact():
    x = np.array([0.0, 0.3, 1.0])
    y = np.array([1.0, -2.0, 0.5])
    v, dv = evaluate(x, y, np.array([0.1, 0.2, 0.3]), np.zeros(3), x)
    assert np.array_equal(v, y)
    assert np.allclose(dv, [0.1, 0.2, 0.3])
