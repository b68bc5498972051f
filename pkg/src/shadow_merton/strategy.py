"""Optimal holdings, consumption and trades reconstructed along a log-odds path.

Share holdings are the primary state.  Between boundary contacts the number
of shares is constant and the bond account only pays for consumption.  At a
contact with ``beta_lo`` (shadow price at the ask) shares are bought until
the stock fraction, valued at the shadow price, is back at
``logistic(beta_lo)``.  At ``beta_hi`` (shadow price at the bid) they are
sold down to ``logistic(beta_hi)``.  Every trade is priced at the shadow
price, so the shadow wealth obeys the self-financing recursion
``V_{k+1} = V_k + phi1_k (S~_{k+1} - S~_k) - delta V_k dt`` exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ProvenanceError, ValidationError
from .fbvp import FreeBoundarySolution
from ._kernels import strategy_kernel
from .market import MarketParams, validate
from .reflected import BulkTrade, ReflectedPath, grid_arrays, initial_beta

OUTCOME_COLUMNS = ("t", "s", "c_offset", "s_tilde", "v_tilde", "phi0", "phi1",
                   "consumption", "big_l", "big_u", "liquidation")


@dataclass
class SimulatedOutcome:
    times: np.ndarray
    s: np.ndarray
    c_offset: np.ndarray
    s_tilde: np.ndarray
    v_tilde: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    consumption: np.ndarray
    big_l: np.ndarray
    big_u: np.ndarray
    liquidation: np.ndarray
    bulk: BulkTrade
    utility: float  # sum_k e^{-delta t_k} log(c_k) dt over k < n
    fraction_gap: float  # max |logit(held fraction) - beta| over the path
    provenance: str
    eta_b: float
    eta_s: float

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path) -> None:
        cols = [getattr(self, "times" if c == "t" else c) for c in OUTCOME_COLUMNS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(OUTCOME_COLUMNS)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    def summary(self, params: MarketParams) -> dict:
        return {
            "terminal": {c: float(getattr(self, c)[-1]) for c in OUTCOME_COLUMNS[1:]},
            "utility": self.utility,
            "bulk": {"side": self.bulk.side, "shares": self.bulk.shares, "price": self.bulk.price},
            "audit": {"self_financing": self_financing_audit(self, params),
                      "fraction_gap": self.fraction_gap},
        }

    def summary_json(self, params: MarketParams) -> str:
        return json.dumps(self.summary(params), sort_keys=True)


def initial_holdings(params: MarketParams, bulk: BulkTrade) -> tuple[float, float, float, float]:
    """Bond and share holdings after the bulk trade, with its purchase and sale values."""
    phi1 = params.eta_s + bulk.shares
    phi0 = params.eta_b - bulk.shares * bulk.price
    l0 = max(bulk.shares, 0.0) * params.s0
    u0 = max(-bulk.shares, 0.0) * params.s0
    return phi0, phi1, l0, u0


def check_provenance(sol: FreeBoundarySolution, params: MarketParams, path: ReflectedPath) -> None:
    if params.fingerprint() != sol.param_hash:
        raise ProvenanceError("solution was solved for other market parameters")
    if path.provenance != sol.param_hash:
        raise ProvenanceError("path was simulated from a different solution")


def run_strategy(sol: FreeBoundarySolution, params: MarketParams,
                 path: ReflectedPath) -> SimulatedOutcome:
    """Price, shadow price, holdings, consumption and trades along ``path``.

    The stock is rebuilt from the path's own increments in exact exponential
    form.  The path must start where :func:`initial_beta` puts it.
    """
    validate(params)
    check_provenance(sol, params, path)
    beta0, bulk = initial_beta(params, sol)
    if abs(path.beta[0] - beta0) > 1e-12:
        raise ValidationError("path does not start at the initial log-odds of this endowment")
    phi0, phi1, l0, u0 = initial_holdings(params, bulk)

    n = path.n_steps
    out = [np.empty(n + 1) for _ in range(8)]
    util, gap = strategy_kernel(*grid_arrays(sol), params.mu, params.sigma, params.delta,
                                params.lambda_buy, params.lambda_sell, sol.beta_lo,
                                sol.beta_hi, path.dt, path.dw, path.beta, path.dphi,
                                path.dpsi, params.s0, phi0, phi1, l0, u0, *out)
    s, c, st, v, p0, p1, big_l, big_u = out
    bid = (1.0 - params.lambda_sell) * s
    ask = (1.0 + params.lambda_buy) * s
    liq = p0 + np.maximum(p1, 0.0) * bid - np.maximum(-p1, 0.0) * ask
    return SimulatedOutcome(times=path.times, s=s, c_offset=c, s_tilde=st, v_tilde=v,
                            phi0=p0, phi1=p1, consumption=params.delta * v, big_l=big_l,
                            big_u=big_u, liquidation=liq, bulk=bulk, utility=util,
                            fraction_gap=gap, provenance=sol.param_hash,
                            eta_b=params.eta_b, eta_s=params.eta_s)


def transaction_cost_ledger(outcome: SimulatedOutcome, params: MarketParams) -> np.ndarray:
    """Bond account implied by the share trades at bid/ask prices and the consumption."""
    s = outcome.s
    ask = (1.0 + params.lambda_buy) * s
    bid = (1.0 - params.lambda_sell) * s
    dn = np.diff(outcome.phi1)
    flows = (bid[1:] * np.maximum(-dn, 0.0) - ask[1:] * np.maximum(dn, 0.0)
             - outcome.consumption[:-1] * outcome.dt)
    b = outcome.bulk
    start = params.eta_b - b.shares * ((1.0 + params.lambda_buy) * params.s0 if b.shares > 0
                                       else (1.0 - params.lambda_sell) * params.s0)
    return np.cumsum(np.concatenate([[start], flows]))


def self_financing_audit(outcome: SimulatedOutcome, params: MarketParams) -> float:
    """Largest gap between the engine's bond holdings and the bid/ask ledger."""
    return float(np.max(np.abs(transaction_cost_ledger(outcome, params) - outcome.phi0)))


def davis_norman_policy(outcome: SimulatedOutcome) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative purchase and sale values ``(L, U)``, measured at the mid price."""
    return outcome.big_l.copy(), outcome.big_u.copy()


def stochastic_exponential_wealth(outcome: SimulatedOutcome, path: ReflectedPath,
                                  sol: FreeBoundarySolution, params: MarketParams) -> np.ndarray:
    """Shadow wealth from the stochastic exponential of the fraction ``logistic(beta)``.

    Uses the Ito form of ``d log V = pi dS~/S~ - delta dt - pi^2 |vol S~|^2 dt / 2``
    with the shadow price volatility ``sigma / (1 - g')``.  Agrees with the
    recursion up to discretization error.
    """
    gp = np.interp(path.beta[:-1], sol.y, sol.g_prime)
    vol2 = (params.sigma / (1.0 - gp)) ** 2
    pi = 1.0 / (1.0 + np.exp(-path.beta[:-1]))
    dlog_st = np.diff(np.log(outcome.s_tilde))
    inc = pi * (dlog_st + 0.5 * vol2 * path.dt) - params.delta * path.dt - 0.5 * pi * pi * vol2 * path.dt
    return outcome.v_tilde[0] * np.exp(np.concatenate([[0.0], np.cumsum(inc)]))
