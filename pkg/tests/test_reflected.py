import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadow_merton.errors import ValidationError
from shadow_merton.fbvp import shoot
from shadow_merton.market import MarketParams
from shadow_merton.fbvp import g_eval
from shadow_merton.reflected import (brownian_bridge_refine, brownian_increments, initial_beta,
                                     simulate_beta)
from shadow_merton.shadow import ShadowCoefficients, drift_a, vol_b


@pytest.fixture(scope="module")
def path(ref_coeffs, ref_sol):
    return simulate_beta(ref_coeffs, ref_sol.beta_lo, 5.0, 1e-4, seed=(11, 0))


def test_stays_in_interval(path, ref_sol):
    assert np.all(path.beta >= ref_sol.beta_lo) and np.all(path.beta <= ref_sol.beta_hi)


def test_discrete_skorokhod_identity(path, ref_coeffs):
    b = path.beta[:-1]
    pred = b + drift_a(b, ref_coeffs) * path.dt + vol_b(b, ref_coeffs) * path.dw
    resid = path.beta[1:] - (pred + path.dphi - path.dpsi)
    assert np.max(np.abs(resid)) < 1e-12


def test_local_times_act_only_at_edges(path, ref_sol):
    assert np.all(path.dphi >= 0) and np.all(path.dpsi >= 0)
    assert not np.any((path.dphi > 0) & (path.dpsi > 0))
    assert np.all(path.beta[1:][path.dphi > 0] == ref_sol.beta_lo)
    assert np.all(path.beta[1:][path.dpsi > 0] == ref_sol.beta_hi)
    assert np.all(np.diff(path.phi) >= 0) and np.all(np.diff(path.psi) >= 0)
    assert path.phi[-1] > 0 and path.psi[-1] > 0


def test_zero_noise_drifts_up_and_sticks(ref_coeffs, ref_sol):
    # the drift is positive on the whole interval, so without noise the path
    # climbs to the upper edge and then pushes against it
    p = simulate_beta(ref_coeffs, ref_sol.beta_lo, 40.0, 1e-2, dw=np.zeros(4000))
    assert np.all(np.diff(p.beta) >= 0)
    assert p.beta[-1] == ref_sol.beta_hi
    assert p.phi[-1] == 0.0 and p.psi[-1] > 0


def test_same_seed_same_path(ref_coeffs, ref_sol):
    a = simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 1e-3, seed=(3, 7))
    b = simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 1e-3, seed=(3, 7))
    c = simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 1e-3, seed=(3, 8))
    assert np.array_equal(a.beta, b.beta)
    assert not np.array_equal(a.dw, c.dw)


def test_integer_seed_is_path_zero():
    assert np.array_equal(brownian_increments(5, 0, 10, 0.1), brownian_increments(5, 0, 10, 0.1))


@given(st.integers(0, 2 ** 32), st.integers(0, 1000), st.integers(1, 3))
@settings(max_examples=15)
def test_refined_increments_sum_to_coarse(seed, index, level):
    coarse = brownian_increments(seed, index, 16, 0.1)
    fine = brownian_increments(seed, index, 16, 0.1, level)
    assert fine.shape == (16 * 2 ** level,)
    np.testing.assert_allclose(fine.reshape(16, -1).sum(axis=1), coarse, atol=1e-14)


def test_increment_moments():
    dw = brownian_increments(1, 0, 400_000, 0.01, level=1)
    h = 0.005
    assert abs(dw.mean()) < 4 * math.sqrt(h / dw.size)
    assert dw.var() / h == pytest.approx(1.0, abs=0.01)
    # neighbouring bridge halves are uncorrelated
    assert abs(np.corrcoef(dw[0::2], dw[1::2])[0, 1]) < 0.01


def test_refine_reuses_brownian_path(ref_coeffs, ref_sol):
    p = simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 1e-2, seed=(4, 2))
    q = brownian_bridge_refine(p, 4, ref_coeffs)
    assert q.dt == pytest.approx(2.5e-3) and q.n_steps == 400
    np.testing.assert_allclose(q.dw.reshape(100, 4).sum(axis=1), p.dw, atol=1e-14)
    direct = simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 2.5e-3, seed=(4, 2), level=2)
    np.testing.assert_array_equal(direct.dw, q.dw)
    with pytest.raises(ValidationError):
        brownian_bridge_refine(p, 3, ref_coeffs)


def test_strong_convergence_under_refinement(ref_coeffs, ref_sol):
    dists = np.zeros(4)
    for seed in range(10):
        base = simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 1e-2, seed=(seed, 0))
        ref = brownian_bridge_refine(base, 64, ref_coeffs).beta[::64]
        for j, f in enumerate((1, 2, 4, 8)):
            b = brownian_bridge_refine(base, f, ref_coeffs).beta[::f]
            dists[j] += np.max(np.abs(b - ref)) / 10
    assert np.all(np.diff(dists) < 0)


def test_bad_inputs(ref_coeffs, ref_sol):
    with pytest.raises(ValidationError):
        simulate_beta(ref_coeffs, ref_sol.beta_hi + 0.1, 1.0, 1e-3)
    with pytest.raises(ValidationError):
        simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        simulate_beta(ref_coeffs, ref_sol.y0, 1.0, 1e-3, dw=np.zeros(5))


def test_initial_beta_all_cash_buys_at_ask(ref_sol, ref_params):
    beta0, bulk = initial_beta(ref_params, ref_sol)
    assert beta0 == ref_sol.beta_lo
    assert bulk.side == "buy" and bulk.shares > 0
    assert bulk.price == pytest.approx((1 + ref_params.lambda_buy) * ref_params.s0, rel=1e-15)
    # wealth at the shadow price is unchanged and the new fraction is the edge
    held = bulk.shares * bulk.price
    assert held / ref_params.eta_b == pytest.approx(1 / (1 + math.exp(-beta0)), rel=1e-14)


def test_initial_beta_all_stock_sells_at_bid(ref_sol, ref_params):
    p = ref_params.with_endowment(0.0, 0.01)
    beta0, bulk = initial_beta(p, ref_sol)
    assert beta0 == ref_sol.beta_hi and bulk.side == "sell" and bulk.shares < 0
    assert bulk.price == pytest.approx((1 - p.lambda_sell) * p.s0, rel=1e-15)


@given(st.floats(0.72, 0.88))
def test_initial_beta_interior_root(ref_sol, ref_params, frac):
    # endowment with the given fraction of wealth in stock at the mid price
    p = ref_params.with_endowment(1 - frac, frac / ref_params.s0)
    beta0, bulk = initial_beta(p, ref_sol)
    assert bulk.side == "none" and bulk.shares == 0.0
    c, _ = g_eval(ref_sol, beta0)
    held = p.eta_s * p.s0 * math.exp(c)
    assert held / (p.eta_b + held) == pytest.approx(1 / (1 + math.exp(-beta0)), rel=1e-12)


def test_csv_columns(tmp_path, ref_coeffs, ref_sol):
    p = simulate_beta(ref_coeffs, ref_sol.y0, 0.01, 1e-3, seed=1)
    p.to_csv(tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["t", "beta", "phi", "psi", "dw"]
    assert len(rows) == p.n_steps + 2
    assert float(rows[1][1]) == p.beta[0]


def test_long_run_edge_visits(ref_coeffs, ref_sol):
    # at the reference market the drift points up across the whole band, so
    # the sell edge is hit on every path while the buy edge needs a crash
    for seed in range(100):
        p = simulate_beta(ref_coeffs, ref_sol.y0, 50.0, 1e-2, seed=(seed, 0))
        assert p.psi[-1] > 0


def test_balanced_market_visits_both_edges():
    params = MarketParams(mu=0.045, sigma=0.3, delta=0.02, lambda_buy=0.05, lambda_sell=0.05)
    sol = shoot(params)
    coeffs = ShadowCoefficients.from_solution(sol, params)
    both = 0
    for seed in range(100):
        p = simulate_beta(coeffs, sol.y0, 200.0, 1e-2, seed=(seed, 0))
        both += p.phi[-1] > 0 and p.psi[-1] > 0
    assert both >= 95
