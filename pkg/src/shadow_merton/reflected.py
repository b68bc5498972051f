"""Reflected log-odds diffusion on ``[beta_lo, beta_hi]`` and its initial state.

Random numbers: path ``i`` of an ensemble with base seed ``seed`` draws its
coarse Brownian increments from ``SeedSequence(seed, spawn_key=(i, 0))``.
Each dyadic refinement level ``j >= 1`` draws its Brownian-bridge midpoints
from ``SeedSequence(seed, spawn_key=(i, j))``.  Paths therefore never share
a stream and their values do not depend on the order they are simulated in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ValidationError
from .fbvp import FreeBoundarySolution, g_eval
from ._kernels import beta_kernel
from .market import MarketParams, bid_ask, validate
from .shadow import ShadowCoefficients


def generator(seed: int, path_index: int, level: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(level)))
    return np.random.Generator(np.random.PCG64(ss))


def bridge_split(dw: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
    """Halve every increment of length ``h`` by sampling the bridge midpoint."""
    left = 0.5 * dw + math.sqrt(h / 4.0) * rng.standard_normal(dw.shape[0])
    out = np.empty(2 * dw.shape[0])
    out[0::2] = left
    out[1::2] = dw - left
    return out


def brownian_increments(seed: int, path_index: int, n_steps: int, dt: float,
                        level: int = 0) -> np.ndarray:
    """Increments on the ``dt / 2**level`` grid; coarser levels are their pairwise sums."""
    dw = math.sqrt(dt) * generator(seed, path_index, 0).standard_normal(n_steps)
    h = dt
    for j in range(1, level + 1):
        dw = bridge_split(dw, h, generator(seed, path_index, j))
        h /= 2.0
    return dw


@dataclass(frozen=True)
class BulkTrade:
    """Initial transaction moving the endowment onto the no-trade boundary."""

    side: str  # "buy", "sell" or "none"
    shares: float  # signed change in share holdings
    price: float  # execution price (ask for buys, bid for sells)

    @property
    def value(self) -> float:
        return abs(self.shares) * self.price


@dataclass
class ReflectedPath:
    times: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    dw: np.ndarray
    dphi: np.ndarray
    dpsi: np.ndarray
    dt: float
    seed: tuple[int, int] | None
    provenance: str
    level: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.dw.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "beta", "phi", "psi", "dw"])
            n = self.n_steps
            for k in range(n + 1):
                dw = repr(float(self.dw[k])) if k < n else "nan"
                w.writerow([repr(float(self.times[k])), repr(float(self.beta[k])),
                            repr(float(self.phi[k])), repr(float(self.psi[k])), dw])


def _logistic(y: float) -> float:
    return 1.0 / (1.0 + math.exp(-y))


def initial_beta(params: MarketParams, sol: FreeBoundarySolution) -> tuple[float, BulkTrade]:
    """Starting log-odds and the bulk trade needed to reach the no-trade region.

    Buys at the ask when the endowment's stock fraction, valued at the ask,
    is below the lower edge; sells at the bid when the fraction valued at the
    bid exceeds the upper edge.  Otherwise the start lies inside, at the
    unique root of ``eta_S S0 e^{g(y)} / (eta_B + eta_S S0 e^{g(y)}) = logistic(y)``.
    """
    validate(params)
    eta_b, eta_s, s0 = params.eta_b, params.eta_s, params.s0
    bid, ask = bid_ask(params, s0)
    pi_lo, pi_hi = sol.fraction_bounds

    frac_ask = eta_s * ask / (eta_b + eta_s * ask)
    frac_bid = eta_s * bid / (eta_b + eta_s * bid)
    if frac_ask < pi_lo:
        beta0, price, side = sol.beta_lo, s0 * math.exp(sol.c_hi), "buy"
    elif frac_bid > pi_hi:
        beta0, price, side = sol.beta_hi, s0 * math.exp(sol.c_lo), "sell"
    else:
        def excess(y):
            return math.log(eta_s * s0) + g_eval(sol, y)[0] - math.log(eta_b) - y

        lo, hi = sol.beta_lo, sol.beta_hi
        f_lo, f_hi = excess(lo), excess(hi)
        if f_lo <= 0:
            beta0 = lo
        elif f_hi >= 0:
            beta0 = hi
        else:
            beta0 = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return beta0, BulkTrade("none", 0.0, s0 * math.exp(g_eval(sol, beta0)[0]))

    wealth = eta_b + eta_s * price
    phi1 = _logistic(beta0) * wealth / price
    return beta0, BulkTrade(side, phi1 - eta_s, price)


def grid_arrays(sol: FreeBoundarySolution):
    return (np.ascontiguousarray(sol.y), np.ascontiguousarray(sol.g),
            np.ascontiguousarray(sol.g_prime), np.ascontiguousarray(sol.g_second))


def n_steps_for(horizon: float, dt: float) -> int:
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if not horizon > 0 or dt > horizon:
        raise ValidationError("need 0 < dt <= horizon")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * horizon:
        raise ValidationError("horizon must be a whole number of steps")
    return n


def simulate_beta(coeffs: ShadowCoefficients, beta0: float, horizon: float, dt: float,
                  seed: int | tuple[int, int] | None = 0,
                  dw: np.ndarray | None = None, level: int = 0) -> ReflectedPath:
    """Projected Euler scheme for the reflected diffusion.

    The overshoot past an edge is booked as the local-time increment at that
    edge and the state is set exactly onto it.  ``seed`` is either a base seed
    (path index 0) or ``(seed_base, path_index)``; ``dw`` injects increments
    directly.
    """
    sol = coeffs.sol
    if not sol.beta_lo <= beta0 <= sol.beta_hi:
        raise ValidationError("beta0 outside [beta_lo, beta_hi]")
    n = n_steps_for(horizon, dt)
    if seed is not None and not isinstance(seed, tuple):
        seed = (int(seed), 0)
    if dw is None:
        if seed is None:
            raise ValidationError("need a seed or injected increments")
        dw = brownian_increments(seed[0], seed[1], n // (2 ** level), dt * 2 ** level, level)
    dw = np.ascontiguousarray(dw, dtype=float)
    if dw.shape[0] != n:
        raise ValidationError(f"expected {n} increments, got {dw.shape[0]}")
    beta = np.empty(n + 1)
    dphi = np.empty(n)
    dpsi = np.empty(n)
    p = coeffs.params
    beta_kernel(*grid_arrays(sol), p.sigma, p.delta, sol.beta_lo, sol.beta_hi,
                 float(beta0), float(dt), dw, beta, dphi, dpsi)
    phi = np.concatenate([[0.0], np.cumsum(dphi)])
    psi = np.concatenate([[0.0], np.cumsum(dpsi)])
    return ReflectedPath(times=np.arange(n + 1) * dt, beta=beta, phi=phi, psi=psi, dw=dw,
                         dphi=dphi, dpsi=dpsi, dt=dt, seed=seed, provenance=sol.param_hash,
                         level=level)


def brownian_bridge_refine(path: ReflectedPath, factor: int,
                           coeffs: ShadowCoefficients) -> ReflectedPath:
    """Re-simulate on a ``dt / factor`` grid driven by the same Brownian motion."""
    if factor < 1 or factor & (factor - 1):
        raise ValidationError("factor must be a power of 2")
    if factor == 1:
        return path
    seed, index = path.seed if path.seed is not None else (0, 0)
    dw = path.dw
    h = path.dt
    level = path.level
    for _ in range(int(math.log2(factor))):
        level += 1
        dw = bridge_split(dw, h, generator(seed, index, level))
        h /= 2.0
    horizon = path.times[-1]
    out = simulate_beta(coeffs, path.beta[0], horizon, h, seed=path.seed, dw=dw)
    out.level = level
    return out
