import math

import numpy as np
import pytest

from shadow_merton.errors import ProvenanceError, SolverError, ValidationError
from shadow_merton.evaluation import (UtilityEstimate, WedgePolicy, combined_stderr, dp_oracle,
                                      frictionless_mc, mc_utility, mid_fraction_bounds,
                                      paired_difference, perturbation_test,
                                      simulate_wedge_policies, sweep_costs, tail_bound,
                                      width_nondecreasing, write_sweep_csv)
from shadow_merton.fbvp import shoot
from shadow_merton.market import frictionless_value, merton_constants
from shadow_merton.reflected import initial_beta, simulate_beta
from shadow_merton.strategy import run_strategy


def test_estimate_from_samples():
    e = UtilityEstimate.from_samples([1.0, 2.0, 3.0, 4.0], 1.0, 0.1, 0.0, 0)
    assert e.mean == 2.5 and e.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    bad = UtilityEstimate.from_samples([1.0, -np.inf], 1.0, 0.1, 0.0, 0)
    assert bad.n_failed == 1 and bad.stderr == math.inf
    f = UtilityEstimate.from_samples([1.0, 2.0], 1.0, 0.1, 1.0, 0, tail_tol=1e-3)
    assert f.tail_flag
    assert combined_stderr(e, e) == pytest.approx(math.sqrt(2) * e.stderr)
    with pytest.raises(ValidationError):
        paired_difference(e, f)


def test_mc_sample_matches_full_path_simulation(ref_sol, ref_params, ref_coeffs):
    est = mc_utility(ref_sol, ref_params, 3, 2.0, 1e-3, seed_base=9)
    beta0, _ = initial_beta(ref_params, ref_sol)
    for i in range(3):
        path = simulate_beta(ref_coeffs, beta0, 2.0, 1e-3, seed=(9, i))
        assert run_strategy(ref_sol, ref_params, path).utility == est.samples[i]


def test_mc_independent_of_threads(ref_sol, ref_params):
    a = mc_utility(ref_sol, ref_params, 13, 1.0, 1e-3, seed_base=4, threads=1)
    b = mc_utility(ref_sol, ref_params, 13, 1.0, 1e-3, seed_base=4, threads=3)
    assert np.array_equal(a.samples, b.samples) and a.mean == b.mean


def test_mc_rejects_foreign_solution(ref_sol, ref_params):
    with pytest.raises(ProvenanceError):
        mc_utility(ref_sol, ref_params.with_costs(0.02, 0.02), 2, 1.0, 1e-2)
    with pytest.raises(ValidationError):
        mc_utility(ref_sol, ref_params, 2, 1.0, 1e-2, level=3)
    with pytest.raises(ValidationError):
        mc_utility(ref_sol, ref_params, 0, 1.0, 1e-2)


def test_stderr_scales_with_sqrt_paths(ref_sol, ref_params):
    ratios = [mc_utility(ref_sol, ref_params, 400, 5.0, 1e-2, seed_base=100 + r).stderr
              / mc_utility(ref_sol, ref_params, 200, 5.0, 1e-2, seed_base=200 + r).stderr
              for r in range(5)]
    assert 0.6 <= np.mean(ratios) <= 0.85


def test_frictionless_mc_matches_closed_form(ref_params):
    p = ref_params
    est = frictionless_mc(p, 200, 150.0, 1e-3, seed_base=3)
    exact = frictionless_value(p, p.initial_wealth)
    # left Riemann sum bias is about dt * |value| * delta / 2
    assert abs(est.mean - exact) < 3 * est.stderr + est.tail_bound + 1e-2


def test_vanishing_costs_recover_frictionless_paths(ref_params):
    p = ref_params.with_costs(1e-6, 1e-6)
    sol = shoot(p)
    a = mc_utility(sol, p, 20, 150.0, 1e-3, seed_base=5)
    b = frictionless_mc(p, 20, 150.0, 1e-3, seed_base=5)
    diff, _ = paired_difference(a, b)
    assert abs(diff) < 5e-3


def test_tail_bound_covers_truncation(ref_sol, ref_params):
    tb = tail_bound(ref_sol, ref_params, 150.0)
    assert tb < 1e-4 * abs(frictionless_value(ref_params, ref_params.initial_wealth))
    short = mc_utility(ref_sol, ref_params, 30, 30.0, 1e-2, seed_base=6)
    long = mc_utility(ref_sol, ref_params, 30, 60.0, 1e-2, seed_base=6)
    d, se = paired_difference(long, short)
    assert abs(d) <= tail_bound(ref_sol, ref_params, 30.0) + 3 * se


def test_wedge_at_shadow_edges_matches_shadow_policy(ref_sol, ref_params):
    shadow = mc_utility(ref_sol, ref_params, 40, 20.0, 1e-3, seed_base=7)
    pol = WedgePolicy.from_solution(ref_sol, wealth_proxy="shadow")
    wedge = simulate_wedge_policies(ref_params, [pol], 20.0, 1e-3, 7, 40, sol=ref_sol)[0]
    d, se = paired_difference(wedge, shadow)
    assert abs(d) < max(3 * se, 1e-3)


def test_wedge_arms_do_not_interact(ref_params):
    a = WedgePolicy(0.7, 0.9)
    b = WedgePolicy(0.2, 0.95)
    both = simulate_wedge_policies(ref_params, [a, b], 5.0, 1e-2, 1, 20)
    alone = simulate_wedge_policies(ref_params, [a], 5.0, 1e-2, 1, 20)
    assert np.array_equal(both[0].samples, alone[0].samples)


def test_mid_rule_wedge_at_merton_fraction_is_continuous_rebalancing(ref_params):
    # with negligible costs and a point band, the wedge is the frictionless policy
    p = ref_params.with_costs(1e-9, 1e-9)
    pi, _ = merton_constants(p)
    wedge = simulate_wedge_policies(p, [WedgePolicy(pi, pi, "mid", "mid")], 10.0, 1e-3, 2, 10)[0]
    exact = frictionless_mc(p, 10, 10.0, 1e-3, seed_base=2)
    d, se = paired_difference(wedge, exact)
    assert abs(d) < 3 * se + 1e-3


def test_wedge_validation(ref_params, ref_sol):
    for args in ((0.9, 0.8), (0.0, 0.5), (0.5, 1.0)):
        with pytest.raises(ValidationError):
            WedgePolicy(*args)
    with pytest.raises(ValidationError):
        WedgePolicy(0.5, 0.6, valuation_rule="best")
    with pytest.raises(ValidationError):
        WedgePolicy(0.5, 0.6, wealth_proxy="oracle")
    with pytest.raises(ValidationError):
        simulate_wedge_policies(ref_params, [WedgePolicy(0.5, 0.6, wealth_proxy="shadow")], 1.0, 0.1)
    with pytest.raises(ValidationError):
        simulate_wedge_policies(ref_params, [WedgePolicy(0.5, 0.6),
                                             WedgePolicy(0.5, 0.6, wealth_proxy="mid")], 1.0, 0.1)
    with pytest.raises(ValidationError):
        simulate_wedge_policies(ref_params, [], 1.0, 0.1)


def test_perturbation_table_structure(ref_sol, ref_params):
    t = perturbation_test(ref_sol, ref_params, [0.05], 10, 2.0, 1e-2, seed_base=3)
    assert [r.shift for r in t.rows] == [-0.05, 0.0, 0.05]
    base = t.rows[1]
    assert base.diff == 0.0 and base.estimate is t.base
    assert t.rows[0].pi_lo == pytest.approx(ref_sol.fraction_bounds[0] * 0.95)


def test_mid_fraction_bounds_reprices_holdings(ref_sol, ref_params):
    lo, hi = mid_fraction_bounds(ref_sol)
    a, b = ref_sol.fraction_bounds
    s = 100.0
    # one unit of wealth at the ask with fraction a, revalued at the mid
    shares = a / ((1 + ref_params.lambda_buy) * s)
    assert lo == pytest.approx(shares * s / (1 - a + shares * s), rel=1e-14)
    shares = b / ((1 - ref_params.lambda_sell) * s)
    assert hi == pytest.approx(shares * s / (1 - b + shares * s), rel=1e-14)


@pytest.fixture(scope="module")
def oracle(ref_params):
    return dp_oracle(ref_params, 400)


def test_oracle_agrees_with_free_boundary(oracle, ref_sol):
    lo, hi = mid_fraction_bounds(ref_sol)
    assert abs(oracle.pi_lo - lo) <= 2 * oracle.cell
    assert abs(oracle.pi_hi - hi) <= 2 * oracle.cell


def test_oracle_grid_refinement_is_stable(oracle, ref_params):
    fine = dp_oracle(ref_params, 800)
    assert abs(fine.pi_lo - oracle.pi_lo) <= oracle.cell
    assert abs(fine.pi_hi - oracle.pi_hi) <= oracle.cell


def test_oracle_collapses_without_costs(ref_params):
    r = dp_oracle(ref_params.with_costs(1e-6, 1e-6), 400)
    pi, _ = merton_constants(ref_params)
    assert r.pi_hi - r.pi_lo < 0.02
    assert r.pi_lo - r.cell <= pi <= r.pi_hi + r.cell


def test_oracle_errors(ref_params):
    with pytest.raises(ValidationError):
        dp_oracle(ref_params, 100)
    with pytest.raises(ValidationError, match="time step"):
        dp_oracle(ref_params, 400, time_step=1.0)
    with pytest.raises(SolverError):
        dp_oracle(ref_params, 400, max_iter=1)


def test_sweep_rows(ref_params, tmp_path):
    rows = sweep_costs(ref_params, [0.001, 0.01, -0.5, (0.01, 0.0), 0.01])
    assert [bool(r["error"]) for r in rows] == [False, False, True, False, False]
    assert rows[1] == rows[4]
    assert all(r["y0_inside"] for r in rows if not r["error"])
    assert width_nondecreasing(rows)
    write_sweep_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 6 and lines[0].startswith("lambda_buy,lambda_sell")


def test_extra_policies_ride_along(ref_sol, ref_params):
    wide = WedgePolicy(0.01, 0.99)
    t = perturbation_test(ref_sol, ref_params, [0.05], 6, 2.0, 1e-2, seed_base=3, extra=[wide])
    alone = simulate_wedge_policies(ref_params, [wide], 2.0, 1e-2, 3, 6)[0]
    plain = perturbation_test(ref_sol, ref_params, [0.05], 6, 2.0, 1e-2, seed_base=3)
    assert np.array_equal(t.extra[0].samples, alone.samples)
    assert [r.estimate.mean for r in t.rows] == [r.estimate.mean for r in plain.rows]
