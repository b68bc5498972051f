"""Market and preference constants for the log-utility consumption problem.

The stock follows a geometric Brownian motion with drift ``mu`` and
volatility ``sigma``; the bond is constant at 1.  Purchases pay the ask
``(1 + lambda_buy) S`` and sales receive the bid ``(1 - lambda_sell) S``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace

from .errors import ValidationError


@dataclass(frozen=True)
class MarketParams:
    mu: float
    sigma: float
    delta: float
    lambda_buy: float
    lambda_sell: float
    s0: float = 100.0
    eta_b: float = 1.0
    eta_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MarketParams":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__ if k in d})

    def with_costs(self, lambda_buy: float, lambda_sell: float) -> "MarketParams":
        return replace(self, lambda_buy=lambda_buy, lambda_sell=lambda_sell)

    def with_endowment(self, eta_b: float, eta_s: float, s0: float | None = None) -> "MarketParams":
        return replace(self, eta_b=eta_b, eta_s=eta_s, s0=self.s0 if s0 is None else s0)

    @property
    def initial_wealth(self) -> float:
        """Endowment valued at the mid price."""
        return self.eta_b + self.eta_s * self.s0

    def fingerprint(self) -> str:
        """Hash of the fields that determine the free boundary problem.

        Endowment and initial price are excluded: one solved boundary serves
        any starting portfolio.
        """
        key = {k: repr(float(getattr(self, k)))
               for k in ("mu", "sigma", "delta", "lambda_buy", "lambda_sell")}
        blob = json.dumps(key, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate(params: MarketParams) -> MarketParams:
    """Return ``params`` unchanged, or raise on the first violated invariant."""
    p = params
    vals = [p.mu, p.sigma, p.delta, p.lambda_buy, p.lambda_sell, p.s0, p.eta_b, p.eta_s]
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError("non-finite parameter")
    if not p.sigma > 0:
        raise ValidationError("sigma must be positive")
    if not 0 < p.mu < p.sigma ** 2:
        raise ValidationError("mu out of (0, sigma^2)")
    if not p.delta > 0:
        raise ValidationError("delta must be positive")
    if p.lambda_buy < 0:
        raise ValidationError("lambda_buy must be nonnegative")
    if not 0 <= p.lambda_sell < 1:
        raise ValidationError("lambda_sell out of [0, 1)")
    if p.lambda_buy == 0 and p.lambda_sell == 0:
        raise ValidationError("both transaction costs zero")
    if not p.s0 > 0:
        raise ValidationError("s0 must be positive")
    if p.eta_b < 0 or p.eta_s < 0:
        raise ValidationError("endowment must be nonnegative")
    if not p.eta_b + p.eta_s * p.s0 > 0:
        raise ValidationError("initial wealth must be positive")
    return params


def bid_ask(params: MarketParams, s: float) -> tuple[float, float]:
    if not s > 0:
        raise ValidationError("price must be positive")
    return (1.0 - params.lambda_sell) * s, (1.0 + params.lambda_buy) * s


def log_cost_bounds(params: MarketParams) -> tuple[float, float]:
    """Range ``(C_lo, C_hi)`` of the log offset between shadow and mid price."""
    return math.log1p(-params.lambda_sell), math.log1p(params.lambda_buy)


def merton_constants(params: MarketParams) -> tuple[float, float]:
    """Frictionless Merton fraction ``mu / sigma^2`` and its log-odds."""
    s2 = params.sigma ** 2
    return params.mu / s2, -math.log(s2 / params.mu - 1.0)


def liquidation_value(phi0: float, phi1: float, bid: float, ask: float) -> float:
    """Cash plus long stock at the bid, minus short stock at the ask."""
    return phi0 + max(phi1, 0.0) * bid - max(-phi1, 0.0) * ask


def frictionless_value(params: MarketParams, x: float) -> float:
    """Optimal discounted log-utility of consumption without transaction costs.

    With the constant fraction ``pi = mu / sigma^2`` and ``c = delta X``, log
    wealth has drift ``mu^2 / (2 sigma^2) - delta``, so

        E int_0^inf e^{-delta t} log(c_t) dt
            = log(delta x) / delta + (mu^2 / (2 sigma^2) - delta) / delta^2.
    """
    if not x > 0:
        raise ValidationError("wealth must be positive")
    d = params.delta
    growth = params.mu ** 2 / (2.0 * params.sigma ** 2) - d
    return math.log(d * x) / d + growth / d ** 2
