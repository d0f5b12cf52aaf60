"""Continuous-time limit values.

The large-n limit of the super-replication price solves a nonlinear
Black-Scholes equation.  In log-price x = ln S it reads

    v_t + sup_{a in A} [ 1/2 (sigma^2 + 2 sigma a) (v_xx - v_x)
                         - G_hat(t, e^x, a e^x) ] = 0,
    v(1, x) = payoff(e^x),

where G_hat is the scaled limit of the conjugate cost and A = [a_lo, c] is
the admissible control interval (a_lo = max(-c, -sigma/2 + eps) so the
squared volatility sigma^2 + 2 sigma a stays positive).  The Hamiltonian is
not spelled out in closed form anywhere; we evaluate the pointwise sup
directly — in closed form for quadratic G_hat (first-order condition,
clipped), by grid scan otherwise.

The solver is an explicit monotone finite-difference scheme: central second
difference for v_xx and central first difference for v_x (the combination
v_xx - v_x stays monotone because dx < 2, and second-order accuracy in the
drift is needed for the 1e-3 benchmark tolerances), CFL-limited time step.
Since v_xx - v_x equals S^2 v_SS, the "linearity in S" boundary condition
v_SS = 0 makes both the diffusion term and the optimal control vanish at the
edges, so boundary values are simply frozen in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .friction import ScaledLimit
from .payoffs import Claim, markov_dimension, payoff_terminal

__all__ = [
    "HJBGrid",
    "LimitSpec",
    "HJBSolution",
    "default_grid",
    "hjb_solve",
    "bs_closed_form",
    "j_constant_alpha",
    "liquidity_premium_probe",
    "export_surface_csv",
]

_A_CLIP_EPS = 1e-3  # keeps sigma^2 + 2 sigma a bounded away from 0


@dataclass(frozen=True)
class HJBGrid:
    """Log-price/time grid; Na is the control-scan resolution."""

    x_min: float
    x_max: float
    nx: int = 801
    nt: int = 0  # 0: derive from the CFL bound
    na: int = 201

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("need x_min < x_max")
        if self.nx < 5:
            raise ValueError("need at least 5 space points")
        if self.na < 3:
            raise ValueError("need at least 3 control points")


@dataclass(frozen=True)
class LimitSpec:
    """Admissibility level c and the scaled cost limit, plus the market."""

    c: float
    g_hat: ScaledLimit
    sigma: float
    s0: float

    def __post_init__(self):
        if not self.c >= 0.0:
            raise ValueError("admissibility level c must be >= 0")
        if not (self.sigma > 0 and self.s0 > 0):
            raise ValueError("need sigma > 0 and s0 > 0")
        if self.g_hat.kind == "zero" and not self.c < self.sigma / 2.0:
            raise ValueError(
                "zero cost limit needs c < sigma/2 so the squared volatility "
                "stays positive over the whole control interval"
            )

    @property
    def a_bounds(self) -> tuple[float, float]:
        lo = max(-self.c, -self.sigma / 2.0 + _A_CLIP_EPS)
        return (min(lo, self.c), self.c)

    @property
    def vol_max(self) -> float:
        return math.sqrt(self.sigma**2 + 2.0 * self.sigma * self.c)


@dataclass
class HJBSolution:
    value: float
    grid: HJBGrid
    x: np.ndarray
    times: np.ndarray
    surface: np.ndarray  # (len(times), nx), sampled coarsely in time


def default_grid(spec: LimitSpec, nx: int = 801, na: int = 201) -> HJBGrid:
    """Domain of 6 worst-case standard deviations around ln s0."""
    half = 6.0 * max(spec.vol_max, spec.sigma)
    x0 = math.log(spec.s0)
    return HJBGrid(x0 - half, x0 + half, nx=nx, na=na)


def _g_hat_vals(spec: LimitSpec, t: float, ex: np.ndarray, a: float):
    """G_hat(t, S, a S) on the grid, for a scalar control a."""
    gh = spec.g_hat
    if gh.kind == "zero":
        return 0.0
    y2 = (a * ex) ** 2
    v = gh.quad_coef * y2
    return v / ex if gh.price_scaled else v


def hjb_solve(spec: LimitSpec, claim: Claim, grid: HJBGrid | None = None):
    """Backward explicit scheme; returns an :class:`HJBSolution`.

    The value at (t=0, s0) is linearly interpolated in x.
    """
    if markov_dimension(claim) != "terminal-price":
        raise ValueError(f"HJB solver supports terminal-price claims only "
                         f"(got {claim.kind})")
    if grid is None:
        grid = default_grid(spec)
    x = np.linspace(grid.x_min, grid.x_max, grid.nx)
    dx = x[1] - x[0]
    a_lo, a_hi = spec.a_bounds
    alpha2_max = max(
        spec.sigma**2 + 2.0 * spec.sigma * a_hi,
        spec.sigma**2 + 2.0 * spec.sigma * a_lo,
    )
    if dx >= 2.0:
        raise ValueError("dx >= 2 breaks monotonicity of the central scheme")
    dt_max = dx * dx / alpha2_max
    nt = grid.nt if grid.nt > 0 else int(math.ceil(1.0 / (0.9 * dt_max)))
    if 1.0 / nt > dt_max * (1.0 + 1e-12):
        raise ValueError(
            f"CFL violation: nt={nt} gives dt={1.0 / nt:.3e} > {dt_max:.3e}"
        )
    dt = 1.0 / nt

    ex = np.exp(x)
    v = payoff_terminal(claim, ex).astype(float)
    gh = spec.g_hat
    quad_closed = gh.kind == "quadratic"
    if quad_closed:
        # interior maximizer of 1/2(sigma^2+2 sigma a) L - q2 a^2 e^{2x} (/e^x)
        denom = 2.0 * gh.quad_coef * (ex if gh.price_scaled else ex * ex)
    a_scan = np.linspace(a_lo, a_hi, grid.na)

    keep_every = max(nt // 64, 1)
    times = [1.0]
    surf = [v.copy()]

    for step in range(nt):
        t = 1.0 - (step + 1) * dt
        vxx = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dx * dx)
        vx = (v[2:] - v[:-2]) / (2.0 * dx)
        lcurv = vxx - vx  # discrete S^2 v_SS; monotone because dx < 2

        if gh.kind == "zero":
            ham = 0.5 * np.where(
                lcurv >= 0.0,
                (spec.sigma**2 + 2.0 * spec.sigma * a_hi) * lcurv,
                (spec.sigma**2 + 2.0 * spec.sigma * a_lo) * lcurv,
            )
        elif quad_closed:
            a_star = np.clip(spec.sigma * lcurv / denom[1:-1], a_lo, a_hi)
            ham = (0.5 * (spec.sigma**2 + 2.0 * spec.sigma * a_star) * lcurv
                   - gh.quad_coef * (a_star * ex[1:-1]) ** 2
                   / (ex[1:-1] if gh.price_scaled else 1.0))
        else:
            ham = np.full(grid.nx - 2, -np.inf)
            for a in a_scan:
                cand = (0.5 * (spec.sigma**2 + 2.0 * spec.sigma * a) * lcurv
                        - _g_hat_vals(spec, t, ex[1:-1], a))
                ham = np.maximum(ham, cand)

        v[1:-1] = v[1:-1] + dt * ham  # boundaries frozen (v_SS = 0, a* = 0)
        if (step + 1) % keep_every == 0 or step == nt - 1:
            times.append(t)
            surf.append(v.copy())

    value = float(np.interp(math.log(spec.s0), x, v))
    return HJBSolution(value, grid, x, np.array(times), np.array(surf))


def bs_closed_form(kind: str, s0: float, k: float, vol: float) -> float:
    """Zero-rate Black-Scholes price at maturity 1."""
    if vol <= 0:
        raise ValueError("vol must be positive")
    if k <= 0:
        if kind == "call":
            return s0
        raise ValueError("put needs a positive strike")
    d1 = (math.log(s0 / k) + 0.5 * vol * vol) / vol
    d2 = d1 - vol
    nd = lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    call_val = s0 * nd(d1) - k * nd(d2)
    if kind == "call":
        return call_val
    if kind == "put":
        return call_val - s0 + k  # parity, exact
    raise ValueError(f"unsupported claim kind {kind!r}")


def j_constant_alpha(a: float, lam: float, sigma: float, s0: float,
                     k: float) -> float:
    """Constant-control value for the call under a quadratic cost limit.

    For constant a the controlled price is lognormal with squared volatility
    alpha^2 = sigma^2 + 2 sigma a and the expected cost integral has the
    closed form (a^2/(4 lam)) s0^2 (e^{alpha^2} - 1)/alpha^2, because
    E[S(t)^2] = s0^2 e^{alpha^2 t}.
    """
    alpha2 = sigma * sigma + 2.0 * sigma * a
    if alpha2 <= 0:
        raise ValueError("degenerate control: sigma^2 + 2 sigma a <= 0")
    price = bs_closed_form("call", s0, k, math.sqrt(alpha2))
    cost = (a * a / (4.0 * lam)) * s0 * s0 * (math.exp(alpha2) - 1.0) / alpha2
    return price - cost


def liquidity_premium_probe(spec: LimitSpec, claim: Claim, eps: float,
                            grid: HJBGrid | None = None):
    """Premium of the level-eps limit value over the frictionless price.

    Returns (lower_estimate, bs_baseline).  The cost of running a nonzero
    control is O(eps^2) while the variance gain is O(eps), so a strictly
    positive premium is expected for convex non-affine payoffs.
    """
    if not 0.0 <= eps <= spec.c:
        raise ValueError("need 0 <= eps <= c")
    probe = LimitSpec(eps, spec.g_hat, spec.sigma, spec.s0)
    sol = hjb_solve(probe, claim, grid)
    baseline = (bs_closed_form(claim.kind, spec.s0, claim.strike, spec.sigma)
                if claim.kind in ("call", "put")
                else hjb_solve(LimitSpec(0.0, spec.g_hat, spec.sigma, spec.s0),
                               claim, grid).value)
    return sol.value, baseline


def export_surface_csv(sol: HJBSolution, path) -> None:
    """Plot-ready CSV of the value surface: columns t, x, v."""
    with open(path, "w") as fh:
        fh.write("t,x,v\n")
        for ti, t in enumerate(sol.times):
            for xi, xv in enumerate(sol.x):
                fh.write(f"{t:.12g},{xv:.12g},{sol.surface[ti, xi]:.12g}\n")
