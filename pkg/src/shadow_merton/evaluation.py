"""Monte Carlo utility estimates, competitor policies and an independent DP oracle."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import ProvenanceError, SolverError, ValidationError
from .fbvp import FreeBoundarySolution, ShootingControl, shoot
from .market import MarketParams, merton_constants, validate
from .reflected import brownian_increments, grid_arrays, initial_beta, n_steps_for
from .strategy import initial_holdings


def resolve_threads(threads: int | None = None) -> int:
    """Thread count: explicit argument, else ``SHADOW_MERTON_THREADS``, else usable cores."""
    if threads is None:
        env = os.environ.get("SHADOW_MERTON_THREADS")
        threads = int(env) if env else len(os.sched_getaffinity(0))
    if threads < 1:
        raise ValidationError("thread count must be positive")
    return threads


def _map_paths(work, n_paths: int, threads: int | None):
    """Run ``work(indices)`` on contiguous chunks; results land by path index."""
    threads = min(resolve_threads(threads), n_paths)
    chunks = np.array_split(np.arange(n_paths), threads)
    if threads == 1:
        for c in chunks:
            work(c)
        return
    with ThreadPoolExecutor(max_workers=threads) as ex:
        list(ex.map(work, chunks))


@dataclass
class UtilityEstimate:
    mean: float
    stderr: float
    n_paths: int
    horizon: float
    dt: float
    tail_bound: float
    seed_base: int
    n_failed: int = 0
    tail_flag: bool = False
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, samples, horizon, dt, tail_bound, seed_base, tail_tol=None):
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        failed = int(np.sum(~np.isfinite(samples)))
        mean = float(np.mean(samples))
        se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 and failed == 0 else (
            0.0 if n == 1 else math.inf)
        flag = tail_tol is not None and tail_bound > tail_tol
        return cls(mean, se, n, horizon, dt, tail_bound, seed_base, failed, flag, samples)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("mean", "stderr", "n_paths", "horizon", "dt",
                                               "tail_bound", "seed_base", "n_failed",
                                               "tail_flag")}


def combined_stderr(a: UtilityEstimate, b: UtilityEstimate) -> float:
    return math.hypot(a.stderr, b.stderr)


def paired_difference(a: UtilityEstimate, b: UtilityEstimate) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` path by path (needs shared seeds)."""
    if a.samples is None or b.samples is None or a.samples.shape != b.samples.shape:
        raise ValidationError("paired difference needs per-path samples of equal length")
    d = a.samples - b.samples
    return float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(d.shape[0]))


def tail_bound(sol: FreeBoundarySolution, params: MarketParams, horizon: float) -> float:
    """Bound on ``|E int_T^inf e^{-delta t} log(c_t) dt|`` for the shadow policy.

    Log wealth has drift ``pi^2 |vol|^2 / 2 - delta`` with ``pi`` at most
    ``logistic(beta_hi)`` and the shadow volatility at most ``sigma``, so
    ``|E log c_t| <= A + B t`` with ``A = |log(delta V0)|`` and
    ``B = max(delta, |pi_hi^2 sigma^2 / 2 - delta|)``.  Integrating against
    the discount gives ``e^{-delta T} (A / delta + B (T / delta + 1 / delta^2))``.
    """
    d = params.delta
    _, bulk = initial_beta(params, sol)
    phi0, phi1, _, _ = initial_holdings(params, bulk)
    v0 = phi0 + phi1 * bulk.price
    pi_hi = 1.0 / (1.0 + math.exp(-sol.beta_hi))
    a = abs(math.log(d * v0))
    b = max(d, abs(0.5 * pi_hi ** 2 * params.sigma ** 2 - d))
    return math.exp(-d * horizon) * (a / d + b * (horizon / d + 1.0 / d ** 2))


def _increments(seed_base, i, n, dt, level):
    return brownian_increments(seed_base, i, n >> level, dt * (1 << level), level)


def mc_utility(sol: FreeBoundarySolution, params: MarketParams, n_paths: int, horizon: float,
               dt: float, seed_base: int = 0, *, level: int = 0, tail_tol: float | None = None,
               threads: int | None = None) -> UtilityEstimate:
    """Expected discounted log-utility of consumption under the shadow policy.

    Path ``i`` uses the increments of substream ``(seed_base, i)``.  With
    ``level = j`` they are the coarse increments at step ``dt 2^j`` refined
    ``j`` times by Brownian bridges, so estimates at ``dt`` and ``dt / 2`` share
    their randomness.
    """
    validate(params)
    if params.fingerprint() != sol.param_hash:
        raise ProvenanceError("solution was solved for other market parameters")
    if n_paths < 1:
        raise ValidationError("need at least one path")
    n = n_steps_for(horizon, dt)
    if n % (1 << level):
        raise ValidationError("step count not divisible by 2**level")
    beta0, bulk = initial_beta(params, sol)
    phi0, phi1, _, _ = initial_holdings(params, bulk)
    grid = grid_arrays(sol)
    p = params
    util = np.empty(n_paths)

    def work(idx):
        for i in idx:
            dw = _increments(seed_base, int(i), n, dt, level)
            util[i] = _kernels.shadow_path(*grid, p.mu, p.sigma, p.delta, p.lambda_buy,
                                           p.lambda_sell, sol.beta_lo, sol.beta_hi, dt, dw,
                                           beta0, p.s0, phi0, phi1)

    _map_paths(work, n_paths, threads)
    tb = tail_bound(sol, params, horizon)
    return UtilityEstimate.from_samples(util, horizon, dt, tb, seed_base, tail_tol)


@dataclass(frozen=True)
class WedgePolicy:
    """Keep the stock fraction in ``[pi_lo, pi_hi]`` by minimal trades.

    ``valuation_rule`` fixes the price used to measure the fraction:
    ``"spread"`` (ask when testing the lower edge, bid for the upper),
    ``"ask"``, ``"bid"`` or ``"mid"``.  ``wealth_proxy`` sets what consumption
    is proportional to: ``"liquidation"``, ``"mid"`` or ``"shadow"``.
    """

    pi_lo: float
    pi_hi: float
    valuation_rule: str = "spread"
    wealth_proxy: str = "liquidation"

    def __post_init__(self):
        if not 0 < self.pi_lo <= self.pi_hi < 1:
            raise ValidationError("need 0 < pi_lo <= pi_hi < 1")
        if self.valuation_rule not in _kernels.RULES:
            raise ValidationError(f"unknown valuation rule {self.valuation_rule!r}")
        if self.wealth_proxy not in _kernels.PROXIES:
            raise ValidationError(f"unknown wealth proxy {self.wealth_proxy!r}")

    @classmethod
    def from_solution(cls, sol: FreeBoundarySolution, **kw) -> "WedgePolicy":
        lo, hi = sol.fraction_bounds
        return cls(lo, hi, **kw)

    def shifted(self, rel: float) -> "WedgePolicy":
        return WedgePolicy(self.pi_lo * (1 + rel), self.pi_hi * (1 + rel),
                           self.valuation_rule, self.wealth_proxy)


def _wedge_tail_bound(params, policy, mean_log_c_end, horizon):
    # drift of log wealth without trading costs, maximised over the band
    d = params.delta
    grid = np.linspace(policy.pi_lo, policy.pi_hi, 64)
    b = float(np.max(np.abs(grid * params.mu - 0.5 * grid ** 2 * params.sigma ** 2 - d)))
    return math.exp(-d * horizon) * (abs(mean_log_c_end) / d + b / d ** 2)


def simulate_wedge_policies(params: MarketParams, policies: list[WedgePolicy], horizon: float,
                            dt: float, seed_base: int = 0, n_paths: int = 1000, *,
                            sol: FreeBoundarySolution | None = None, level: int = 0,
                            threads: int | None = None) -> list[UtilityEstimate]:
    """Several wedge policies on common random numbers, one estimate per policy.

    The tail bound assumes the log-wealth drift stays within its cost-free
    range over the band, starting from the sample mean of the terminal log
    consumption; it is a diagnostic rather than a proof.
    """
    validate(params)
    if not policies:
        raise ValidationError("no policies given")
    proxies = {pol.wealth_proxy for pol in policies}
    if len(proxies) != 1:
        raise ValidationError("all policies in one batch must share a wealth proxy")
    proxy = _kernels.PROXIES[proxies.pop()]
    if proxy == 2:
        if sol is None:
            raise ValidationError("the shadow wealth proxy needs a solution")
        grid = grid_arrays(sol)
    else:
        grid = tuple(np.zeros(2) for _ in range(4))
    n = n_steps_for(horizon, dt)
    if n % (1 << level):
        raise ValidationError("step count not divisible by 2**level")
    m = len(policies)
    lo = np.array([pol.pi_lo for pol in policies])
    hi = np.array([pol.pi_hi for pol in policies])
    rules = np.array([_kernels.RULES[pol.valuation_rule] for pol in policies], dtype=np.int64)
    util = np.empty((n_paths, m))
    log_c_end = np.full((n_paths, m), np.nan)
    p = params

    def work(idx):
        failed = np.empty(m, dtype=np.bool_)
        trades = np.empty(m, dtype=np.int64)
        for i in idx:
            dw = _increments(seed_base, int(i), n, dt, level)
            _kernels.wedge_path(p.mu, p.sigma, p.delta, p.lambda_buy, p.lambda_sell, p.s0,
                                p.eta_b, p.eta_s, dt, dw, lo, hi, rules, proxy, *grid,
                                util[i], log_c_end[i], failed, trades)

    _map_paths(work, n_paths, threads)
    out = []
    for j, pol in enumerate(policies):
        ends = log_c_end[:, j]
        ends = ends[np.isfinite(ends)]
        tb = _wedge_tail_bound(params, pol, float(np.mean(ends)) if ends.size else 0.0, horizon)
        out.append(UtilityEstimate.from_samples(util[:, j], horizon, dt, tb, seed_base))
    return out


def simulate_wedge_policy(params: MarketParams, policy: WedgePolicy, horizon: float, dt: float,
                          seed_base: int = 0, n_paths: int = 1000, **kw) -> UtilityEstimate:
    return simulate_wedge_policies(params, [policy], horizon, dt, seed_base, n_paths, **kw)[0]


@dataclass(frozen=True)
class PerturbationRow:
    shift: float
    pi_lo: float
    pi_hi: float
    estimate: UtilityEstimate
    diff: float  # arm minus unshifted, path by path
    diff_stderr: float


@dataclass(frozen=True)
class PerturbationTable:
    rows: list[PerturbationRow]
    base: UtilityEstimate
    base_is_max: bool  # no arm beats the unshifted one by more than 2 paired stderr
    monotone_down: bool  # utility falls as the shift grows below zero
    monotone_up: bool  # utility falls as the shift grows above zero
    extra: tuple = ()  # estimates for the ``extra`` policies, in the order given

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["shift", "pi_lo", "pi_hi", "mean", "stderr", "diff", "diff_stderr"])
            for r in self.rows:
                w.writerow([repr(r.shift), repr(r.pi_lo), repr(r.pi_hi), repr(r.estimate.mean),
                            repr(r.estimate.stderr), repr(r.diff), repr(r.diff_stderr)])


def perturbation_test(sol: FreeBoundarySolution, params: MarketParams, rel_shift,
                      n_paths: int, horizon: float, dt: float, seed_base: int = 0, *,
                      policy: WedgePolicy | None = None, extra=(),
                      threads: int | None = None) -> PerturbationTable:
    """Wedge utility with both fraction edges scaled by ``1 + s`` for ``s`` in ``+-rel_shift``.

    All arms and the unshifted base run on the same increments.  Policies in
    ``extra`` (same wealth proxy) ride along in the batch and are returned in
    ``extra``; they do not enter the table.
    """
    base_pol = policy if policy is not None else WedgePolicy.from_solution(sol)
    mags = sorted({abs(float(s)) for s in rel_shift} - {0.0})
    shifts = sorted({0.0} | {s for m in mags for s in (-m, m)} | {float(s) for s in rel_shift})
    pols = [base_pol if s == 0.0 else base_pol.shifted(s) for s in shifts]
    extra = list(extra)
    ests = simulate_wedge_policies(params, pols + extra, horizon, dt, seed_base, n_paths,
                                   sol=sol, threads=threads)
    ests, extra_ests = ests[:len(pols)], tuple(ests[len(pols):])
    base = ests[shifts.index(0.0)]
    rows = []
    for s, pol, est in zip(shifts, pols, ests):
        diff, dse = paired_difference(est, base) if s != 0.0 else (0.0, 0.0)
        rows.append(PerturbationRow(s, pol.pi_lo, pol.pi_hi, est, diff, dse))
    base_is_max = all(r.diff <= 2.0 * r.diff_stderr for r in rows)
    up = [r.estimate.mean for r in rows if r.shift >= 0]
    down = [r.estimate.mean for r in rows if r.shift <= 0][::-1]
    return PerturbationTable(rows, base, base_is_max,
                             bool(np.all(np.diff(down) < 0)), bool(np.all(np.diff(up) < 0)),
                             extra_ests)


def frictionless_mc(params: MarketParams, n_paths: int, horizon: float, dt: float,
                    seed_base: int = 0, *, level: int = 0) -> UtilityEstimate:
    """Merton policy without costs, log wealth propagated exactly; an MC sanity oracle."""
    n = n_steps_for(horizon, dt)
    pi, _ = merton_constants(params)
    d = params.delta
    g = pi * params.mu - 0.5 * pi ** 2 * params.sigma ** 2 - d
    disc = np.exp(-d * dt * np.arange(n)) * dt
    lx0 = math.log(params.initial_wealth)
    util = np.empty(n_paths)
    for i in range(n_paths):
        dw = _increments(seed_base, i, n, dt, level)
        logx = lx0 + np.concatenate([[0.0], np.cumsum(g * dt + pi * params.sigma * dw[:-1])])
        util[i] = float(disc @ (math.log(d) + logx))
    tb = math.exp(-d * horizon) * (abs(math.log(d) + lx0) / d + abs(g) * (horizon / d + 1 / d ** 2))
    return UtilityEstimate.from_samples(util, horizon, dt, tb, seed_base)


# --- dynamic-programming oracle -------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    pi_lo: float
    pi_hi: float
    cell: float
    iterations: int
    time_step: float

    def __iter__(self):
        return iter((self.pi_lo, self.pi_hi))


def mid_fraction_bounds(sol: FreeBoundarySolution) -> tuple[float, float]:
    """The solution's no-trade edges as stock fractions valued at the mid price."""
    p = sol.params
    a, b = sol.fraction_bounds
    r_lo = a / ((1.0 - a) * (1.0 + p.lambda_buy))
    r_hi = b / ((1.0 - b) * (1.0 - p.lambda_sell))
    return r_lo / (1.0 + r_lo), r_hi / (1.0 + r_hi)


def dp_oracle(params: MarketParams, state_grid_size: int = 400, time_step: float | None = None,
              *, n_consumption: int = 301, max_iter: int = 200) -> OracleResult:
    """No-trade interval of a discretised control problem, by policy iteration.

    Wealth factors out of the value as ``log(x) / delta + h(pi)`` with ``pi``
    the mid-valued stock fraction.  Between trades ``pi`` follows a
    locally consistent trinomial chain; a trade from ``pi`` to ``pi'`` costs
    ``log(1 - lambda (pi' - pi) / (1 + lambda pi'))`` in log wealth for buys
    and the analogous amount for sales.  Consumption is a multiple of wealth
    chosen from ``delta * linspace(0.5, 2, n_consumption)``.  The default time
    step is ``0.9`` of the largest admissible one.
    """
    validate(params)
    n = int(state_grid_size)
    if n < 200:
        raise ValidationError("state grid must have at least 200 cells")
    mu, s, d = params.mu, params.sigma, params.delta
    lb, ls = params.lambda_buy, params.lambda_sell
    s2 = s * s
    h = 1.0 / n
    pi = np.arange(n + 1) * h
    qs = d * np.linspace(0.5, 2.0, n_consumption)
    var = (pi * (1 - pi) * s) ** 2
    base_drift = pi * (1 - pi) * (mu - pi * s2)

    def drift(q):
        return base_drift + q * pi

    q_rate = np.max(var + h * np.maximum(np.abs(drift(qs[0])), np.abs(drift(qs[-1]))))
    dt_max = h * h / q_rate
    dt = float(0.9 * dt_max if time_step is None else time_step)
    if not 0 < dt <= dt_max:
        raise ValidationError(f"time step must lie in (0, {dt_max:.3g}] for valid probabilities")

    col, row = np.meshgrid(pi, pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        buy = np.log1p(-lb * (col - row) / (1 + lb * col)) / d
        sell = np.log1p(-ls * (row - col) / (1 - ls * col)) / d
    cost = np.where(col > row, buy, np.where(col < row, sell, -np.inf))

    disc = math.exp(-d * dt)
    om = (1 - disc) / d

    def chain(q):
        b = drift(q)
        pu = (var / 2 + h * np.maximum(b, 0)) * dt / h ** 2
        pd = (var / 2 + h * np.maximum(-b, 0)) * dt / h ** 2
        growth = -q + pi * mu - pi ** 2 * s2 / 2
        return pu, pd, 1 - pu - pd, growth

    def no_trade_value(hv, q):
        pu, pd, ps, growth = chain(q)
        hu = np.append(hv[1:], hv[-1])
        hd = np.insert(hv[:-1], 0, hv[0])
        return om * np.log(q) + disc * (growth * dt / d + pu * hu + pd * hd + ps * hv)

    idx = np.arange(n + 1)
    up = np.minimum(idx + 1, n)
    dn = np.maximum(idx - 1, 0)
    pi_star, _ = merton_constants(params)
    q = np.full(n + 1, d)
    act = np.full(n + 1, -1)
    act[0] = act[n] = int(round(pi_star * n))
    for it in range(1, max_iter + 1):
        pu, pd, ps, growth = chain(q)
        trade = act >= 0
        rows = np.concatenate([idx, idx[trade], idx[~trade], idx[~trade], idx[~trade]])
        cols = np.concatenate([idx, act[trade], up[~trade], dn[~trade], idx[~trade]])
        vals = np.concatenate([np.ones(n + 1), -np.ones(trade.sum()), -disc * pu[~trade],
                               -disc * pd[~trade], -disc * ps[~trade]])
        rhs = np.where(trade, 0.0, om * np.log(q) + disc * growth * dt / d)
        rhs[trade] = cost[idx[trade], act[trade]]
        mat = sps.csc_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
        hv = spla.spsolve(mat, rhs)

        nt_all = np.array([no_trade_value(hv, np.full(n + 1, qq)) for qq in qs])
        best = np.argmax(nt_all, axis=0)
        q_new = qs[best]
        nt = nt_all[best, idx]
        nt[0] = nt[n] = -np.inf
        trade_val = np.max(cost + nt[None, :], axis=1)
        trading = trade_val > nt + 1e-13
        target = np.argmax(cost + np.where(trading, -np.inf, nt)[None, :], axis=1)
        act_new = np.where(trading, target, -1)
        if np.array_equal(act_new, act) and np.array_equal(q_new, q):
            keep = np.nonzero(act < 0)[0]
            return OracleResult(float(pi[keep.min()]), float(pi[keep.max()]), h, it, dt)
        act, q = act_new, q_new
    raise SolverError("policy iteration did not converge")


# --- cost sweep -----------------------------------------------------------------------

SWEEP_COLUMNS = ("lambda_buy", "lambda_sell", "beta_lo", "beta_hi", "pi_lo", "pi_hi",
                 "delta_star", "y0_inside", "error")


def sweep_costs(params: MarketParams, lambda_values, tol: float = 1e-10,
                control: ShootingControl | None = None) -> list[dict]:
    """Solve the boundary problem per cost level; a failing row records its error.

    Entries of ``lambda_values`` are either one number (both costs) or a
    ``(lambda_buy, lambda_sell)`` pair.
    """
    rows = []
    for lam in lambda_values:
        lb, ls = (lam, lam) if np.ndim(lam) == 0 else lam
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row.update(lambda_buy=float(lb), lambda_sell=float(ls))
        try:
            p = params.with_costs(float(lb), float(ls))
            sol = shoot(p, tol=tol, control=control or ShootingControl())
        except (ValidationError, SolverError) as exc:
            row["error"] = str(exc)
        else:
            lo, hi = sol.fraction_bounds
            row.update(beta_lo=sol.beta_lo, beta_hi=sol.beta_hi, pi_lo=lo, pi_hi=hi,
                       delta_star=sol.delta_star, y0_inside=bool(sol.beta_lo < sol.y0 < sol.beta_hi))
        rows.append(row)
    return rows


def width_nondecreasing(rows: list[dict]) -> bool:
    """Diagnostic: is the log-odds width nondecreasing in the (symmetric) cost level."""
    ok = [r for r in rows if not r["error"]]
    ok.sort(key=lambda r: (r["lambda_buy"], r["lambda_sell"]))
    widths = [r["beta_hi"] - r["beta_lo"] for r in ok]
    return bool(np.all(np.diff(widths) >= 0))


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in SWEEP_COLUMNS])
