"""Piecewise quintic Hermite interpolation on a nonuniform grid.

Each node carries value, first and second derivative, so the interpolant is
C^2 and reproduces quintic polynomials exactly.  The scalar kernel is compiled
with numba for use inside the path simulators; the array version is plain
numpy and evaluates the same formulas.
"""

from __future__ import annotations

import numba
import numpy as np


def _basis(t):
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    t5 = t4 * t
    h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5
    h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5
    h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5)
    h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5
    h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5
    h5 = 0.5 * (t3 - 2.0 * t4 + t5)
    return h0, h1, h2, h3, h4, h5


def _basis_d1(t):
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    h0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4
    h1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4
    h2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4)
    h3 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4
    h4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4
    h5 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4)
    return h0, h1, h2, h3, h4, h5


def _basis_d2(t):
    t2 = t * t
    t3 = t2 * t
    h0 = -60.0 * t + 180.0 * t2 - 120.0 * t3
    h1 = -36.0 * t + 96.0 * t2 - 60.0 * t3
    h2 = 0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3)
    h3 = 60.0 * t - 180.0 * t2 + 120.0 * t3
    h4 = -24.0 * t + 84.0 * t2 - 60.0 * t3
    h5 = 0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3)
    return h0, h1, h2, h3, h4, h5


def evaluate(x, y, d1, d2, xq, order=1):
    """Value and derivatives up to ``order`` (0, 1 or 2) at the points ``xq``.

    ``xq`` is clipped to the grid; callers that must not extrapolate check
    the range first.  Returns a tuple of arrays with ``order + 1`` entries.
    """
    xq = np.asarray(xq, dtype=float)
    n = x.shape[0]
    i = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, n - 2)
    h = x[i + 1] - x[i]
    t = np.clip((xq - x[i]) / h, 0.0, 1.0)
    coef = (y[i], h * d1[i], h * h * d2[i], y[i + 1], h * d1[i + 1], h * h * d2[i + 1])

    def combine(basis):
        return sum(c * b for c, b in zip(coef, basis))

    out = [combine(_basis(t))]
    if order >= 1:
        out.append(combine(_basis_d1(t)) / h)
    if order >= 2:
        out.append(combine(_basis_d2(t)) / (h * h))
    return tuple(out)


@numba.njit(cache=True, nogil=True)
def locate(x, xq, i):
    """Interval index for ``xq``, walking from the guess ``i`` (clipped to the grid)."""
    n = x.shape[0]
    if i > n - 2:
        i = n - 2
    while i > 0 and xq < x[i]:
        i -= 1
    while i < n - 2 and xq >= x[i + 1]:
        i += 1
    return i


@numba.njit(cache=True, nogil=True)
def eval_at(x, y, d1, d2, xq, i):
    """Value and first derivative at ``xq`` on interval ``i`` (``t`` clipped to [0, 1])."""
    h = x[i + 1] - x[i]
    t = (xq - x[i]) / h
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    t5 = t4 * t
    c0 = y[i]
    c1 = h * d1[i]
    c2 = h * h * d2[i]
    c3 = y[i + 1]
    c4 = h * d1[i + 1]
    c5 = h * h * d2[i + 1]
    v = (c0 * (1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5)
         + c1 * (t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5)
         + c2 * (0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5))
         + c3 * (10.0 * t3 - 15.0 * t4 + 6.0 * t5)
         + c4 * (-4.0 * t3 + 7.0 * t4 - 3.0 * t5)
         + c5 * (0.5 * (t3 - 2.0 * t4 + t5)))
    dv = (c0 * (-30.0 * t2 + 60.0 * t3 - 30.0 * t4)
          + c1 * (1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4)
          + c2 * (0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4))
          + c3 * (30.0 * t2 - 60.0 * t3 + 30.0 * t4)
          + c4 * (-12.0 * t2 + 28.0 * t3 - 15.0 * t4)
          + c5 * (0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4))) / h
    return v, dv


@numba.njit(cache=True, nogil=True)
def eval_scalar(x, y, d1, d2, xq):
    """Value and first derivative at a single point (clipped to the grid)."""
    n = x.shape[0]
    i = np.searchsorted(x, xq, side="right") - 1
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    return eval_at(x, y, d1, d2, xq, i)
