"""Coefficients of the reflected log-odds diffusion and the shadow price map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProvenanceError, ValidationError
from .fbvp import FreeBoundarySolution, g_eval
from .market import MarketParams


@dataclass(frozen=True)
class ShadowCoefficients:
    sol: FreeBoundarySolution
    params: MarketParams

    def __post_init__(self):
        if self.params.fingerprint() != self.sol.param_hash:
            raise ProvenanceError("coefficients built from a solution for other parameters")

    @classmethod
    def from_solution(cls, sol: FreeBoundarySolution, params: MarketParams | None = None):
        return cls(sol, sol.params if params is None else params)

    @property
    def interval(self) -> tuple[float, float]:
        return self.sol.beta_lo, self.sol.beta_hi


def _as_out(x):
    return float(x) if np.ndim(x) == 0 else x


def drift_a(y, coeffs: ShadowCoefficients):
    """Drift of the log-odds between reflections.

    ``(sigma^2/2) tanh(y/2) / (1 - g'(y))^2 + delta (1 + e^y)``, where
    ``tanh(y/2) = (1 - e^-y) / (1 + e^-y)``.
    """
    p = coeffs.params
    _, gp = g_eval(coeffs.sol, y)
    inv = 1.0 / (1.0 - np.asarray(gp))
    y = np.asarray(y, dtype=float)
    return _as_out(0.5 * p.sigma ** 2 * np.tanh(0.5 * y) * inv * inv + p.delta * (1.0 + np.exp(y)))


def vol_b(y, coeffs: ShadowCoefficients):
    """Volatility ``sigma / (1 - g'(y))``; equals ``sigma`` at both edges."""
    _, gp = g_eval(coeffs.sol, y)
    return _as_out(coeffs.params.sigma / (1.0 - np.asarray(gp)))


def tilde_coeffs(y, coeffs: ShadowCoefficients):
    """Drift and volatility ``(mu_tilde, sigma_tilde)`` of the log offset ``C``.

    Written through ``g'`` so the edges, where the inverse map has infinite
    slope, are regular: ``sigma_tilde = sigma g' / (1 - g')``.
    """
    p = coeffs.params
    s2 = p.sigma ** 2
    _, gp = g_eval(coeffs.sol, y)
    gp = np.asarray(gp)
    inv = 1.0 / (1.0 - gp)
    y = np.asarray(y, dtype=float)
    mu_t = -(p.mu - 0.5 * s2) + 0.5 * s2 * inv * inv * np.tanh(0.5 * y)
    sig_t = p.sigma * gp * inv
    return _as_out(mu_t), _as_out(sig_t)


def shadow_price(s, c, bounds: tuple[float, float] | None = None):
    """``s * exp(c)``; with ``bounds = (C_lo, C_hi)`` the offset is range-checked."""
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(s <= 0):
        raise ValidationError("price must be positive")
    if bounds is not None and (np.any(c < bounds[0]) or np.any(c > bounds[1])):
        raise ValidationError("log offset outside [C_lo, C_hi]")
    return _as_out(s * np.exp(c))
