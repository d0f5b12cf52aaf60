"""Path-dependent European claims on piecewise-linear price paths.

Asian averaging uses the exact time integral of the interpolated path, which
is the natural functional of the continuous path; the arithmetic knot mean is
available behind ``use_knot_mean`` for cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketParams, PLPath, interpolate

__all__ = [
    "Claim",
    "constant",
    "call",
    "put",
    "asian_call",
    "asian_put",
    "lookback_max",
    "tabulated_claim",
    "payoff_eval",
    "payoff_terminal",
    "growth_check",
    "markov_dimension",
    "load_tabulated_payoff",
    "GrowthReport",
]

_KINDS = (
    "constant",
    "call",
    "put",
    "asian_call",
    "asian_put",
    "lookback_max",
    "tabulated",
)


@dataclass(frozen=True)
class Claim:
    kind: str
    strike: float = 0.0
    growth_c: float = 1.0
    growth_p: float = 1.0
    use_knot_mean: bool = False
    price_grid: np.ndarray | None = None
    payoff_grid: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown claim kind {self.kind!r}")
        if self.kind == "tabulated":
            pg = np.asarray(self.price_grid, dtype=float)
            vg = np.asarray(self.payoff_grid, dtype=float)
            if pg.ndim != 1 or pg.shape != vg.shape or pg.size < 2:
                raise ValueError("tabulated claim needs matching 1-d grids")
            if not np.all(np.diff(pg) > 0):
                raise ValueError("tabulated price grid must be strictly increasing")
            if np.any(vg < 0):
                raise ValueError("tabulated payoff must be non-negative")
            object.__setattr__(self, "price_grid", pg)
            object.__setattr__(self, "payoff_grid", vg)


def constant(k: float) -> Claim:
    return Claim("constant", strike=k, growth_c=max(k, 1.0), growth_p=1.0)


def call(k: float) -> Claim:
    return Claim("call", strike=k, growth_c=1.0, growth_p=1.0)


def put(k: float) -> Claim:
    return Claim("put", strike=k, growth_c=max(k, 1.0), growth_p=1.0)


def asian_call(k: float, use_knot_mean: bool = False) -> Claim:
    return Claim("asian_call", strike=k, use_knot_mean=use_knot_mean)


def asian_put(k: float, use_knot_mean: bool = False) -> Claim:
    return Claim(
        "asian_put", strike=k, growth_c=max(k, 1.0), use_knot_mean=use_knot_mean
    )


def lookback_max(k: float) -> Claim:
    return Claim("lookback_max", strike=k)


def tabulated_claim(price_grid, payoff_grid, growth_c=None, growth_p=1.0) -> Claim:
    vg = np.asarray(payoff_grid, dtype=float)
    if growth_c is None:
        growth_c = max(1.0, float(vg.max()))
    return Claim(
        "tabulated",
        growth_c=growth_c,
        growth_p=growth_p,
        price_grid=price_grid,
        payoff_grid=payoff_grid,
    )


def load_tabulated_payoff(path) -> Claim:
    """Load a (price, payoff) two-column numeric text file.

    Interpolated linearly, extrapolated with the boundary slope and clamped
    at zero so the payoff stays non-negative.
    """
    data = np.loadtxt(path, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two numeric columns")
    return tabulated_claim(data[:, 0], data[:, 1])


def _tabulated_eval(claim: Claim, s):
    pg, vg = claim.price_grid, claim.payoff_grid
    s = np.asarray(s, dtype=float)
    out = np.interp(s, pg, vg)
    lo_slope = (vg[1] - vg[0]) / (pg[1] - pg[0])
    hi_slope = (vg[-1] - vg[-2]) / (pg[-1] - pg[-2])
    out = np.where(s < pg[0], vg[0] + lo_slope * (s - pg[0]), out)
    out = np.where(s > pg[-1], vg[-1] + hi_slope * (s - pg[-1]), out)
    return np.maximum(out, 0.0)


def payoff_terminal(claim: Claim, s):
    """Payoff as a function of the terminal price, vectorized over s.

    Only valid for terminal-price claims; lattice and PDE engines use this.
    """
    if markov_dimension(claim) != "terminal-price":
        raise ValueError(f"{claim.kind} is not a terminal-price claim")
    s = np.asarray(s, dtype=float)
    if claim.kind == "constant":
        return np.full_like(s, claim.strike)
    if claim.kind == "call":
        return np.maximum(s - claim.strike, 0.0)
    if claim.kind == "put":
        return np.maximum(claim.strike - s, 0.0)
    return _tabulated_eval(claim, s)


def payoff_eval(claim: Claim, path: PLPath) -> float:
    """Payoff of the claim on an interpolated price path."""
    s1 = float(path.knots[-1])
    if claim.kind in ("constant", "call", "put", "tabulated"):
        return float(payoff_terminal(claim, s1))
    if claim.kind in ("asian_call", "asian_put"):
        avg = float(np.mean(path.knots)) if claim.use_knot_mean else path.average()
        if claim.kind == "asian_call":
            return max(avg - claim.strike, 0.0)
        return max(claim.strike - avg, 0.0)
    if claim.kind == "lookback_max":
        return max(path.max() - claim.strike, 0.0)
    raise AssertionError(claim.kind)


def markov_dimension(claim: Claim) -> str:
    """State needed to price the claim on the recombining lattice."""
    if claim.kind in ("constant", "call", "put", "tabulated"):
        return "terminal-price"
    if claim.kind in ("asian_call", "asian_put"):
        return "price+running-average"
    return "full-path"


@dataclass(frozen=True)
class GrowthReport:
    passed: bool
    worst_ratio: float
    samples: int


def growth_check(
    claim: Claim, params: MarketParams, sample_count: int, seed: int = 0
) -> GrowthReport:
    """Sample random tree paths and test F(path) <= C (1 + ||path||_inf^p)."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(sample_count):
        moves = rng.choice([-1, 1], size=params.n)
        logs = params.sigma / np.sqrt(params.n) * np.concatenate(
            [[0.0], np.cumsum(moves)]
        )
        path = interpolate(params.s0 * np.exp(logs))
        bound = claim.growth_c * (1.0 + path.max() ** claim.growth_p)
        worst = max(worst, payoff_eval(claim, path) / bound)
    # also probe the extreme monotone paths, where growth violations live
    for sign in (-1.0, 1.0):
        logs = sign * params.sigma / np.sqrt(params.n) * np.arange(params.n + 1)
        path = interpolate(params.s0 * np.exp(logs))
        bound = claim.growth_c * (1.0 + path.max() ** claim.growth_p)
        worst = max(worst, payoff_eval(claim, path) / bound)
    return GrowthReport(passed=worst <= 1.0, worst_ratio=worst, samples=sample_count)
