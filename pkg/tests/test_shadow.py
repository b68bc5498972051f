import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shadow_merton.errors import ProvenanceError, ValidationError
from shadow_merton.fbvp import g_eval2
from shadow_merton.shadow import ShadowCoefficients, drift_a, shadow_price, tilde_coeffs, vol_b


def _interior(sol, n=101):
    return np.linspace(sol.beta_lo, sol.beta_hi, n)


def test_volatility_is_sigma_at_edges(ref_coeffs, ref_params):
    lo, hi = ref_coeffs.interval
    assert vol_b(lo, ref_coeffs) == ref_params.sigma
    assert vol_b(hi, ref_coeffs) == ref_params.sigma


def test_coefficients_positive_and_bounded(ref_coeffs, ref_params):
    y = _interior(ref_coeffs.sol)
    b = vol_b(y, ref_coeffs)
    assert np.all(drift_a(y, ref_coeffs) > 0)
    assert np.all((b > 0) & (b <= ref_params.sigma))


def test_offset_dynamics_follow_ito(ref_coeffs, ref_sol):
    # C = g(beta) between reflections: dC = g' dbeta + g'' b^2 / 2 dt
    y = _interior(ref_sol)
    _, gp, g2 = g_eval2(ref_sol, y)
    a, b = drift_a(y, ref_coeffs), vol_b(y, ref_coeffs)
    mu_t, sig_t = tilde_coeffs(y, ref_coeffs)
    np.testing.assert_allclose(mu_t, gp * a + 0.5 * g2 * b * b, atol=1e-9)
    np.testing.assert_allclose(sig_t, gp * b, atol=1e-15)


def test_shadow_price_is_log_optimal_at_logistic_fraction(ref_coeffs, ref_params):
    # the log-optimal fraction for dS~/S~ equals logistic(beta)
    p = ref_params
    y = _interior(ref_coeffs.sol)
    mu_t, sig_t = tilde_coeffs(y, ref_coeffs)
    vol = p.sigma + sig_t
    ret_drift = p.mu + mu_t + 0.5 * sig_t ** 2 + p.sigma * sig_t
    np.testing.assert_allclose(ret_drift / vol ** 2, 1 / (1 + np.exp(-y)), atol=1e-9)


def test_coefficients_refuse_foreign_parameters(ref_sol, ref_params):
    with pytest.raises(ProvenanceError):
        ShadowCoefficients(ref_sol, ref_params.with_costs(0.02, 0.02))
    # endowment changes are fine
    ShadowCoefficients(ref_sol, ref_params.with_endowment(0.5, 0.01))


@given(st.floats(1e-3, 1e4), st.floats(0.0, 1.0))
def test_shadow_price_between_bid_and_ask(ref_sol, ref_params, s, frac):
    c = ref_sol.c_lo + frac * (ref_sol.c_hi - ref_sol.c_lo)
    st_ = shadow_price(s, c, (ref_sol.c_lo, ref_sol.c_hi))
    assert (1 - ref_params.lambda_sell) * s * (1 - 1e-15) <= st_ <= (1 + ref_params.lambda_buy) * s * (1 + 1e-15)


def test_shadow_price_rejects_out_of_range(ref_sol):
    with pytest.raises(ValidationError):
        shadow_price(100.0, ref_sol.c_hi + 1e-6, (ref_sol.c_lo, ref_sol.c_hi))
    with pytest.raises(ValidationError):
        shadow_price(-1.0, 0.0)


def test_evaluation_outside_interval_rejected(ref_coeffs):
    with pytest.raises(ValidationError):
        drift_a(ref_coeffs.sol.beta_lo - 1e-6, ref_coeffs)
