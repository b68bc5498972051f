"""Free boundary problem for the shadow price offset, solved by shooting.

The unknown is a strictly decreasing map ``g`` from the log-odds ``y`` of the
stock fraction to the log offset ``C`` of the shadow price over the mid price.
It solves the second-order ODE implemented in :func:`ode_rhs` on an unknown
interval ``[beta_lo, beta_hi]`` with

    g(beta_lo) = C_hi,  g(beta_hi) = C_lo,  g'(beta_lo) = g'(beta_hi) = 0.

Shooting parameter: ``beta_lo = y0 - Delta`` where ``y0`` is the Merton
log-odds.  For each ``Delta`` the initial value problem starting at
``(C_hi, 0)`` is integrated until ``g'`` returns to zero; the terminal value
``g_end(Delta)`` tends to ``C_hi`` as ``Delta -> 0`` and to ``-inf`` as
``Delta -> inf``, so a sign change of ``g_end - C_lo`` is bracketed and then
refined.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from . import hermite
from .errors import ProvenanceError, SolverError, ValidationError
from .market import MarketParams, log_cost_bounds, merton_constants, validate

SCHEMA_VERSION = 1
INTERPOLATION = "quintic-hermite(g, g', g''=ode)"


def _coeffs(params: MarketParams):
    s2 = params.sigma ** 2
    return params.mu / s2, params.delta / s2


def ode_rhs(y, z, params: MarketParams):
    """Second derivative of ``g`` given ``y`` and the slope ``z = g'(y)``.

    Works elementwise on arrays.
    """
    m, d = _coeffs(params)
    logistic = 1.0 / (1.0 + np.exp(-y))
    e = 2.0 * d * (1.0 + np.exp(y))
    return ((-2.0 * m + 2.0 * logistic)
            + (4.0 * m - 2.0 * logistic - 1.0 - e) * z
            + (-2.0 * m + 1.0 + 2.0 * e) * z * z
            - e * z * z * z)


class OdeField:
    """The ODE right-hand side bound to a parameter set, as a first-order system."""

    def __init__(self, params: MarketParams):
        self.params = params
        m, d = _coeffs(params)
        self._m = m
        self._d = d

    def __call__(self, y: float, z: float) -> float:
        m = self._m
        logistic = 1.0 / (1.0 + math.exp(-y))
        e = 2.0 * self._d * (1.0 + math.exp(y))
        return ((-2.0 * m + 2.0 * logistic)
                + (4.0 * m - 2.0 * logistic - 1.0 - e) * z
                + (-2.0 * m + 1.0 + 2.0 * e) * z * z
                - e * z * z * z)

    def system(self, y, u):
        return np.array([u[1], self(y, u[1])])


def derivative_bound(params: MarketParams) -> float:
    """A priori bound on ``|g'|`` along any shot."""
    mu, s2, d = params.mu, params.sigma ** 2, params.delta
    return max((4.0 * (mu + s2) / d) ** (1.0 / 3.0),
               math.sqrt(8.0 * mu / d),
               8.0 + (4.0 * mu + 2.0 * s2) / d)


@dataclass(frozen=True)
class ShootingControl:
    """Integrator and event settings for a single shot."""

    rtol: float = 1e-12
    atol: float = 1e-14
    event_tol: float = 1e-15
    event_guard: float = 1e-12
    # None: span of Delta + 20 beyond the starting point
    max_span: float | None = None
    max_steps: int = 100_000
    # cap on the step size as a fraction of Delta; the whole first dip of g'
    # lives on a scale of Delta and must not be stepped over
    max_step_frac: float = 0.25
    min_nodes: int = 400
    bound_slack: float = 1e-6

    def __post_init__(self):
        for name in ("rtol", "atol", "event_tol", "event_guard", "max_step_frac"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")


@dataclass
class ShotResult:
    delta: float
    beta_hi: float
    g_end: float
    nodes: np.ndarray  # (n, 3): y, g, g'
    steps: int
    dense: list = field(default_factory=list, repr=False)


def integrate_shot(delta_param: float, params: MarketParams,
                   control: ShootingControl = ShootingControl(),
                   keep_dense: bool = False) -> ShotResult:
    """Integrate from ``y0 - delta_param`` to the first zero of ``g'``."""
    if not delta_param > 0:
        raise ValidationError("shooting parameter must be positive")
    c_lo, c_hi = log_cost_bounds(params)
    _, y0 = merton_constants(params)
    field_ = OdeField(params)
    m_prime = derivative_bound(params)
    start = y0 - delta_param
    span = control.max_span if control.max_span is not None else delta_param + 20.0
    solver = DOP853(field_.system, start, np.array([c_hi, 0.0]), start + span,
                    rtol=control.rtol, atol=control.atol,
                    max_step=control.max_step_frac * delta_param)
    nodes = [(start, c_hi, 0.0)]
    dense = []
    departed = False
    for steps in range(1, control.max_steps + 1):
        t_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise SolverError(f"integrator failed: {msg}")
        t, (gv, gp) = solver.t, solver.y
        if abs(gp) > m_prime * (1.0 + control.bound_slack):
            raise SolverError("derivative bound exceeded")
        seg = solver.dense_output() if (keep_dense or gp >= 0) else None
        t_from = t_prev
        if not departed:
            if gp < -control.event_guard:
                departed = True
            elif gp > control.event_guard:
                # the dip was stepped over; look for it inside the step
                seg = seg or solver.dense_output()
                probe = np.linspace(t_prev, t, 65)[1:-1]
                vals = seg(probe)[1]
                neg = np.nonzero(vals < -control.event_guard)[0]
                if neg.size:
                    departed = True
                    t_from = probe[neg[-1]]
        if departed and gp >= 0:
            root = brentq(lambda s: seg(s)[1], t_from, t, xtol=control.event_tol,
                          rtol=4 * np.finfo(float).eps)
            g_end = float(seg(root)[0])
            if keep_dense:
                dense.append((t_prev, root, seg))
            nodes.append((root, g_end, 0.0))
            return ShotResult(delta_param, float(root), g_end, np.array(nodes), steps, dense)
        nodes.append((t, gv, gp))
        if keep_dense:
            dense.append((t_prev, t, seg))
        if solver.status == "finished":
            break
    raise SolverError(f"no zero found within y0 - Delta + {span:g}")


def scan_shooting_map(params: MarketParams, deltas, control: ShootingControl = ShootingControl()):
    """Tabulate ``Delta -> (beta_hi(Delta), g_end(Delta))`` for inspection."""
    rows = []
    for d in deltas:
        r = integrate_shot(float(d), params, control)
        rows.append((float(d), r.beta_hi, r.g_end))
    return np.array(rows)


@dataclass(frozen=True)
class FreeBoundarySolution:
    params: MarketParams
    beta_lo: float
    beta_hi: float
    delta_star: float
    c_lo: float
    c_hi: float
    y0: float
    m_prime: float
    grid: np.ndarray = field(repr=False)  # (n, 3): y, g, g'
    interpolation_order: str = INTERPOLATION
    bracket: tuple[float, float] = (math.nan, math.nan)
    shooting_residual: float = math.nan

    @property
    def y(self) -> np.ndarray:
        return self.grid[:, 0]

    @property
    def g(self) -> np.ndarray:
        return self.grid[:, 1]

    @property
    def g_prime(self) -> np.ndarray:
        return self.grid[:, 2]

    @property
    def g_second(self) -> np.ndarray:
        """Second derivative at the nodes, read off the ODE."""
        cached = self.__dict__.get("_g2")
        if cached is None:
            cached = ode_rhs(self.y, self.g_prime, self.params)
            object.__setattr__(self, "_g2", cached)
        return cached

    @property
    def fraction_bounds(self) -> tuple[float, float]:
        """Stock fractions at the edges: measured at the ask on the buy edge,
        at the bid on the sell edge."""
        return 1.0 / (1.0 + math.exp(-self.beta_lo)), 1.0 / (1.0 + math.exp(-self.beta_hi))

    @property
    def param_hash(self) -> str:
        return self.params.fingerprint()

    def to_dict(self) -> dict:
        body = {
            "version": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "param_hash": self.param_hash,
            "delta_star": self.delta_star,
            "beta_lo": self.beta_lo,
            "beta_hi": self.beta_hi,
            "c_lo": self.c_lo,
            "c_hi": self.c_hi,
            "y0": self.y0,
            "m_prime": self.m_prime,
            "interpolation_order": self.interpolation_order,
            "bracket": list(self.bracket),
            "shooting_residual": self.shooting_residual,
            "grid": self.grid.tolist(),
        }
        body["digest"] = _digest(body)
        return body

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FreeBoundarySolution":
        if d.get("version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported solution version {d.get('version')!r}")
        body = {k: v for k, v in d.items() if k != "digest"}
        if d.get("digest") != _digest(body):
            raise ProvenanceError("solution digest mismatch (file modified?)")
        params = MarketParams.from_dict(d["params"])
        if params.fingerprint() != d["param_hash"]:
            raise ProvenanceError("parameter hash mismatch")
        return cls(params=params, beta_lo=d["beta_lo"], beta_hi=d["beta_hi"],
                   delta_star=d["delta_star"], c_lo=d["c_lo"], c_hi=d["c_hi"], y0=d["y0"],
                   m_prime=d["m_prime"], grid=np.asarray(d["grid"], dtype=float),
                   interpolation_order=d["interpolation_order"],
                   bracket=tuple(d["bracket"]), shooting_residual=d["shooting_residual"])

    @classmethod
    def from_json(cls, text: str) -> "FreeBoundarySolution":
        return cls.from_dict(json.loads(text))


def _digest(body: dict) -> str:
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _bracket(fn, start: float, cap: int):
    """Find ``lo < hi`` with ``fn(lo) > 0 > fn(hi)`` by doubling or halving."""
    d = start
    v = fn(d)
    if v == 0:
        return d, d
    if v > 0:
        for _ in range(cap):
            d2 = 2.0 * d
            v2 = fn(d2)
            if v2 <= 0:
                return d, d2
            d = d2
    else:
        for _ in range(cap):
            d2 = 0.5 * d
            v2 = fn(d2)
            if v2 > 0:
                return d2, d
            d = d2
    raise SolverError("bracketing failed")


def shoot(params: MarketParams, tol: float = 1e-10,
          control: ShootingControl = ShootingControl(),
          delta_start: float | None = None, bracket_cap: int = 60) -> FreeBoundarySolution:
    """Solve the free boundary problem to ``|g_end - C_lo| <= tol``."""
    validate(params)
    if not tol > 0:
        raise ValidationError("tol must be positive")
    c_lo, c_hi = log_cost_bounds(params)
    _, y0 = merton_constants(params)

    cache: dict[float, float] = {}

    def residual(d: float) -> float:
        if d not in cache:
            cache[d] = integrate_shot(d, params, control).g_end - c_lo
        return cache[d]

    # the region half-width scales like the cube root of the spread
    start = delta_start if delta_start is not None else 0.5 * (c_hi - c_lo) ** (1.0 / 3.0)
    lo, hi = _bracket(residual, start, bracket_cap)
    if lo == hi:
        d_star = lo
    else:
        d_star = brentq(residual, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                        maxiter=200)
    if abs(residual(d_star)) > tol:
        raise SolverError("bisection stalled: "
                          f"|g_end - C_lo| = {abs(residual(d_star)):.3e} > tol at bracket resolution")

    shot = integrate_shot(d_star, params, control, keep_dense=True)
    grid = _assemble_grid(shot, c_lo, c_hi, control.min_nodes)
    return FreeBoundarySolution(params=params, beta_lo=y0 - d_star, beta_hi=shot.beta_hi,
                                delta_star=d_star, c_lo=c_lo, c_hi=c_hi, y0=y0,
                                m_prime=derivative_bound(params), grid=grid,
                                bracket=(lo, hi), shooting_residual=shot.g_end - c_lo)


def _assemble_grid(shot: ShotResult, c_lo: float, c_hi: float, min_nodes: int) -> np.ndarray:
    """Accepted steps, subdivided on the dense output to bound the spacing."""
    y_lo, y_hi = shot.nodes[0, 0], shot.beta_hi
    h_target = (y_hi - y_lo) / min_nodes
    rows = [(y_lo, c_hi, 0.0)]
    for a, b, seg in shot.dense:
        k = max(1, math.ceil((b - a) / h_target))
        ts = np.linspace(a, b, k + 1)[1:]
        vals = seg(ts)
        if b == shot.beta_hi:
            # the event point itself comes from the root finder
            ts, vals = ts[:-1], vals[:, :-1]
        rows.extend(zip(ts, vals[0], vals[1]))
    rows.append((y_hi, shot.g_end, 0.0))
    grid = np.array(rows, dtype=float)
    # spread the terminal mismatch linearly so the far boundary value is exact
    # without introducing curvature
    frac = (grid[:, 0] - y_lo) / (y_hi - y_lo)
    grid[:, 1] += (c_lo - shot.g_end) * frac
    grid[0, 1:] = (c_hi, 0.0)
    grid[-1, 1:] = (c_lo, 0.0)
    return grid


def _check_range(sol: FreeBoundarySolution, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < sol.beta_lo) or np.any(y > sol.beta_hi) or np.any(~np.isfinite(y)):
        raise ValidationError("log-odds outside [beta_lo, beta_hi]")
    return y


def g_eval(sol: FreeBoundarySolution, y):
    """``(g(y), g'(y))`` from the interpolant; never extrapolates."""
    y = _check_range(sol, y)
    g, gp = hermite.evaluate(sol.y, sol.g, sol.g_prime, sol.g_second, y, order=1)
    if y.ndim == 0:
        return float(g), float(gp)
    return g, gp


def g_eval2(sol: FreeBoundarySolution, y):
    """``(g, g', g'')`` from the interpolant."""
    y = _check_range(sol, y)
    return hermite.evaluate(sol.y, sol.g, sol.g_prime, sol.g_second, y, order=2)


def f_eval(sol: FreeBoundarySolution, c):
    """Inverse map: the log-odds ``y`` with ``g(y) = c``, by bisection."""
    c = np.asarray(c, dtype=float)
    if np.any(c < sol.c_lo) or np.any(c > sol.c_hi) or np.any(~np.isfinite(c)):
        raise ValidationError("log offset outside [C_lo, C_hi]")
    lo = np.full(c.shape, sol.beta_lo)
    hi = np.full(c.shape, sol.beta_hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = hermite.evaluate(sol.y, sol.g, sol.g_prime, sol.g_second, mid, order=0)[0]
        # g decreases: g(mid) > c means the root lies to the right
        right = gm > c
        lo = np.where(right, mid, lo)
        hi = np.where(right, hi, mid)
        if np.all((hi - lo) <= 2 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
            break
    out = 0.5 * (lo + hi)
    out = np.where(c == sol.c_hi, sol.beta_lo, out)
    out = np.where(c == sol.c_lo, sol.beta_hi, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Residuals:
    ode_g: float
    ode_f: float
    matching: float
    match_fraction: float
    match_drift: float
    match_vol: float


def residual_check(sol: FreeBoundarySolution, n_probe: int = 200, fd_step: float = 1e-4) -> Residuals:
    """Maximal residuals of the solved system at interior probes.

    * ``ode_g``: the g-equation with ``g''`` from a centred difference of the
      interpolated ``g'``.
    * ``ode_f``: the equation for the inverse ``f = g^{-1}`` via
      ``f' = 1/g'`` and ``f'' = -g''/g'^3``, restricted to ``|g'| > 0.01`` and
      reported relative to ``1 + |f''|``.
    * ``matching``: the three drift/volatility matching conditions after
      computing the shadow drift and volatility from ``g'``; the second
      condition is multiplied through by ``g'`` so it stays finite at the
      edges, and uses the interpolant's analytic ``g''``.
    """
    p = sol.params
    mu, sigma, delta = p.mu, p.sigma, p.delta
    s2 = sigma ** 2
    h = fd_step
    ys = np.linspace(sol.beta_lo + 2 * h, sol.beta_hi - 2 * h, n_probe)
    g, gp, g2 = g_eval2(sol, ys)
    gp_plus = g_eval(sol, ys + h)[1]
    gp_minus = g_eval(sol, ys - h)[1]
    g2_fd = (gp_plus - gp_minus) / (2 * h)
    ode_g = float(np.max(np.abs(g2_fd - ode_rhs(ys, gp, p))))

    mask = np.abs(gp) > 0.01
    ode_f = 0.0
    if np.any(mask):
        yf, z, z2 = ys[mask], gp[mask], g2_fd[mask]
        fp = 1.0 / z
        fpp = -z2 / z ** 3
        logistic = 1.0 / (1.0 + np.exp(-yf))
        e = 2.0 * delta / s2 * (1.0 + np.exp(yf))
        rhs = (e + (2 * mu / s2 - 1.0 - 2.0 * e) * fp
               + (-4 * mu / s2 + 2 * logistic + 1.0 + e) * fp ** 2
               + (2 * mu / s2 - 2 * logistic) * fp ** 3)
        ode_f = float(np.max(np.abs(fpp - rhs) / (1.0 + np.abs(fpp))))

    inv = 1.0 / (1.0 - gp)
    sig_t = sigma * gp * inv
    tanh_half = np.tanh(ys / 2.0)
    mu_t = -(mu - s2 / 2.0) + s2 / 2.0 * inv ** 2 * tanh_half
    vol = sigma + sig_t
    x = mu - s2 / 2.0 + mu_t
    pi = 1.0 / (1.0 + np.exp(-ys))
    m_frac = np.abs(pi - (x / vol ** 2 + 0.5))
    # (sigma + sig_t) - f' sig_t with f' = 1/g' and sig_t = sigma g'/(1-g')
    m_vol = np.abs(vol - sigma * inv)
    lhs_drift = x + delta * vol ** 2 / (0.5 * vol ** 2 - x)
    m_drift = np.abs(gp * lhs_drift - mu_t + g2 * s2 * inv ** 2 / 2.0)
    mf, md, mv = float(m_frac.max()), float(m_drift.max()), float(m_vol.max())
    return Residuals(ode_g, ode_f, max(mf, md, mv), mf, md, mv)
