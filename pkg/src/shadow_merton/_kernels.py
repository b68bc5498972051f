"""Compiled per-path kernels shared by the simulators and the Monte Carlo estimators.

The single-step helpers are used both by the array-filling kernels behind
``simulate_beta`` / ``run_strategy`` and by the fused utility kernel, so a
path evaluated either way gives bit-identical numbers.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .hermite import eval_at, locate

RULES = {"spread": 0, "ask": 1, "bid": 2, "mid": 3}
PROXIES = {"liquidation": 0, "mid": 1, "shadow": 2}


@numba.njit(cache=True, nogil=True)
def beta_step(y, gp, s2h, sigma, delta, lo, hi, dt, dw):
    """Projected Euler step; returns the new state and the overshoots at each edge."""
    e = math.exp(y)
    inv = 1.0 / (1.0 - gp)
    a = s2h * ((e - 1.0) / (e + 1.0)) * inv * inv + delta * (1.0 + e)
    p = y + a * dt + sigma * inv * dw
    if p < lo:
        return lo, lo - p, 0.0
    if p > hi:
        return hi, 0.0, p - hi
    return p, 0.0, 0.0


@numba.njit(cache=True, nogil=True)
def trade_step(b0, b1, stk, sk, at_lo, at_hi, pi_lo, pi_hi):
    """Trade at the shadow price back to the edge fraction; returns holdings and values."""
    if at_lo:
        held = b1 * stk
        x = pi_lo * (b0 + held) - held
        if x > 0.0:
            dn = x / stk
            return b0 - dn * stk, b1 + dn, dn * sk, 0.0
    elif at_hi:
        held = b1 * stk
        x = held - pi_hi * (b0 + held)
        if x > 0.0:
            dn = x / stk
            return b0 + dn * stk, b1 - dn, 0.0, dn * sk
    return b0, b1, 0.0, 0.0


@numba.njit(cache=True, nogil=True)
def shadow_price_at(sk, ck, lam_b, lam_s):
    """``S e^C`` clipped into ``[bid, ask]`` against rounding in ``exp(log1p(lambda))``."""
    return min(max(sk * math.exp(ck), (1.0 - lam_s) * sk), (1.0 + lam_b) * sk)


@numba.njit(cache=True, nogil=True)
def beta_kernel(gx, gy, gd1, gd2, sigma, delta, lo, hi, beta0, dt, dw, beta, dphi, dpsi):
    s2h = 0.5 * sigma * sigma
    beta[0] = beta0
    i = 0
    for k in range(dw.shape[0]):
        y = beta[k]
        i = locate(gx, y, i)
        gp = eval_at(gx, gy, gd1, gd2, y, i)[1]
        beta[k + 1], dphi[k], dpsi[k] = beta_step(y, gp, s2h, sigma, delta, lo, hi, dt, dw[k])


@numba.njit(cache=True, nogil=True)
def strategy_kernel(gx, gy, gd1, gd2, mu, sigma, delta, lam_b, lam_s, lo, hi, dt,
                    dw, beta, dphi, dpsi, s0, phi0_init, phi1_init, l0, u0,
                    s, c, st, v, p0, p1, big_l, big_u):
    """Fill the outcome arrays along a given log-odds path; returns (utility, gap)."""
    n = dw.shape[0]
    pi_lo = 1.0 / (1.0 + math.exp(-lo))
    pi_hi = 1.0 / (1.0 + math.exp(-hi))
    drift = (mu - 0.5 * sigma * sigma) * dt
    i = locate(gx, beta[0], 0)
    s[0] = s0
    c[0] = eval_at(gx, gy, gd1, gd2, beta[0], i)[0]
    st[0] = shadow_price_at(s0, c[0], lam_b, lam_s)
    p0[0] = phi0_init
    p1[0] = phi1_init
    v[0] = phi0_init + phi1_init * st[0]
    big_l[0] = l0
    big_u[0] = u0
    util = 0.0
    gap = 0.0
    disc = dt
    decay = math.exp(-delta * dt)
    for k in range(n):
        cons = delta * v[k]
        util += disc * math.log(cons)
        disc *= decay
        sk = s[k] * math.exp(drift + sigma * dw[k])
        i = locate(gx, beta[k + 1], i)
        ck = eval_at(gx, gy, gd1, gd2, beta[k + 1], i)[0]
        stk = shadow_price_at(sk, ck, lam_b, lam_s)
        b0, b1, dl, du = trade_step(p0[k] - cons * dt, p1[k], stk, sk, dphi[k] > 0.0,
                                    dpsi[k] > 0.0, pi_lo, pi_hi)
        s[k + 1] = sk
        c[k + 1] = ck
        st[k + 1] = stk
        p0[k + 1] = b0
        p1[k + 1] = b1
        v[k + 1] = b0 + b1 * stk
        big_l[k + 1] = big_l[k] + dl
        big_u[k + 1] = big_u[k] + du
        frac = b1 * stk / v[k + 1]
        e = abs(math.log(frac / (1.0 - frac)) - beta[k + 1])
        if e > gap:
            gap = e
    return util, gap


@numba.njit(cache=True, nogil=True)
def shadow_path(gx, gy, gd1, gd2, mu, sigma, delta, lam_b, lam_s, lo, hi, dt, dw,
                beta0, s0, phi0, phi1):
    """Utility of the shadow policy on one path, without storing the path.

    Same arithmetic as ``beta_kernel`` followed by ``strategy_kernel``.
    """
    n = dw.shape[0]
    s2h = 0.5 * sigma * sigma
    pi_lo = 1.0 / (1.0 + math.exp(-lo))
    pi_hi = 1.0 / (1.0 + math.exp(-hi))
    drift = (mu - 0.5 * sigma * sigma) * dt
    y = beta0
    i = locate(gx, y, 0)
    cy, gp = eval_at(gx, gy, gd1, gd2, y, i)
    sk = s0
    b0 = phi0
    b1 = phi1
    v = b0 + b1 * shadow_price_at(s0, cy, lam_b, lam_s)
    util = 0.0
    disc = dt
    decay = math.exp(-delta * dt)
    for k in range(n):
        cons = delta * v
        util += disc * math.log(cons)
        disc *= decay
        y, dphi, dpsi = beta_step(y, gp, s2h, sigma, delta, lo, hi, dt, dw[k])
        sk = sk * math.exp(drift + sigma * dw[k])
        i = locate(gx, y, i)
        cy, gp = eval_at(gx, gy, gd1, gd2, y, i)
        stk = shadow_price_at(sk, cy, lam_b, lam_s)
        b0, b1, _, _ = trade_step(b0 - cons * dt, b1, stk, sk, dphi > 0.0, dpsi > 0.0,
                                  pi_lo, pi_hi)
        v = b0 + b1 * stk
    return util


@numba.njit(cache=True, nogil=True)
def _shadow_wealth(b0, b1, s, y_prev, i_prev, gx, gy, gd1, gd2):
    """Shadow wealth of holdings ``(b0, b1)``, the log-odds they sit at and its grid index."""
    n = gx.shape[0]
    lo = gx[0]
    hi = gx[n - 1]
    base = math.log(b1 * s) - math.log(b0)
    # excess(y) = base + g(y) - y is strictly decreasing with slope <= -1
    if base + gy[0] - lo <= 0.0:
        return b0 + b1 * s * math.exp(gy[0]), lo, 0
    if base + gy[n - 1] - hi >= 0.0:
        return b0 + b1 * s * math.exp(gy[n - 1]), hi, n - 2
    y = min(max(y_prev, lo), hi)
    i = i_prev
    g = 0.0
    for _ in range(50):
        i = locate(gx, y, i)
        g, dg = eval_at(gx, gy, gd1, gd2, y, i)
        step = (base + g - y) / (1.0 - dg)
        y_new = min(max(y + step, lo), hi)
        # first-order update of g; quadratic convergence makes its error ~ step^2
        g += dg * (y_new - y)
        y = y_new
        if abs(step) < 1e-8:
            break
    return b0 + b1 * s * math.exp(g), y, i


@numba.njit(cache=True, nogil=True)
def _rebalance(b0, b1, s, rule, lo_t, hi_t, lam_b, lam_s):
    ask = (1.0 + lam_b) * s
    bid = (1.0 - lam_s) * s
    if rule == 0:
        pb, ps = ask, bid
    elif rule == 1:
        pb, ps = ask, ask
    elif rule == 2:
        pb, ps = bid, bid
    else:
        pb, ps = s, s
    wb = b0 + b1 * pb
    if wb > 0.0 and b1 * pb < lo_t * wb:
        dn = (lo_t * b0 - (1.0 - lo_t) * b1 * pb) / ((1.0 - lo_t) * pb + lo_t * ask)
        return b0 - dn * ask, b1 + dn, True
    ws = b0 + b1 * ps
    if ws > 0.0 and b1 * ps > hi_t * ws:
        dn = (hi_t * b0 - (1.0 - hi_t) * b1 * ps) / ((1.0 - hi_t) * ps + hi_t * bid)
        return b0 - dn * bid, b1 + dn, True
    return b0, b1, False


@numba.njit(cache=True, nogil=True)
def wedge_path(mu, sigma, delta, lam_b, lam_s, s0, eta_b, eta_s, dt, dw,
               pi_lo, pi_hi, rules, proxy, gx, gy, gd1, gd2,
               util, log_c_end, failed, trades):
    """Utility of several wedge policies driven by the same increments.

    Per step: consume from the bond, move the price, then rebalance.  The
    endowment is rebalanced once at time zero before anything else.
    """
    m = pi_lo.shape[0]
    n = dw.shape[0]
    drift = (mu - 0.5 * sigma * sigma) * dt
    b0 = np.empty(m)
    b1 = np.empty(m)
    yb = np.empty(m)
    ib = np.zeros(m, dtype=np.int64)
    s = s0
    for j in range(m):
        b0[j], b1[j], tr = _rebalance(eta_b, eta_s, s, rules[j], pi_lo[j], pi_hi[j], lam_b, lam_s)
        trades[j] = 1 if tr else 0
        util[j] = 0.0
        failed[j] = False
        yb[j] = 0.5 * (gx[0] + gx[gx.shape[0] - 1])
    disc = dt
    decay = math.exp(-delta * dt)
    for k in range(n + 1):
        bid = (1.0 - lam_s) * s
        ask = (1.0 + lam_b) * s
        s_next = s * math.exp(drift + sigma * dw[k]) if k < n else s
        for j in range(m):
            if failed[j]:
                continue
            if proxy == 0:
                w = b0[j] + max(b1[j], 0.0) * bid - max(-b1[j], 0.0) * ask
            elif proxy == 1:
                w = b0[j] + b1[j] * s
            elif b0[j] > 0.0 and b1[j] > 0.0:
                w, yb[j], ib[j] = _shadow_wealth(b0[j], b1[j], s, yb[j], ib[j], gx, gy, gd1, gd2)
            else:
                w = b0[j] + max(b1[j], 0.0) * bid - max(-b1[j], 0.0) * ask
            if not w > 0.0:
                failed[j] = True
                util[j] = -np.inf
                continue
            if k == n:
                log_c_end[j] = math.log(delta * w)
                continue
            cons = delta * w
            util[j] += disc * math.log(cons)
            b0[j], b1[j], tr = _rebalance(b0[j] - cons * dt, b1[j], s_next, rules[j],
                                          pi_lo[j], pi_hi[j], lam_b, lam_s)
            if tr:
                trades[j] += 1
        disc *= decay
        s = s_next
