"""Super-replication cost by backward dynamic programming.

Two engines share the same inner minimization:

* the exact engine walks the full non-recombining tree (capped at n <= 14 by
  default) and also extracts the optimal trading strategy;
* the lattice engine works on the recombining lattice and scales to the
  n ~ hundreds used in convergence studies; it requires the claim to be
  Markovian and the cost to depend on the path only through the current
  price (true for all built-in penalty kinds).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import backend
from ..friction import Penalty, g_eval
from ..market import (
    EXHAUSTIVE_CAP,
    MarketParams,
    interpolate,
    slice_prices,
)
from ..payoffs import Claim, markov_dimension, payoff_eval, payoff_terminal
from .costmodel import build_trade_cost
from .innermin import best_trade, dp_step

__all__ = [
    "GammaGrid",
    "Strategy",
    "ExactResult",
    "LatticeResult",
    "default_gamma_grid",
    "superrep_exact",
    "superrep_lattice",
    "wealth_simulate",
    "verify_superreplication",
    "save_strategy",
    "load_strategy",
]


@dataclass(frozen=True)
class GammaGrid:
    """Uniform grid for the share-holdings variable."""

    lo: float
    hi: float
    m: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("gamma grid needs lo < hi")
        if self.m < 3:
            raise ValueError("gamma grid needs at least 3 points")
        if not self.lo <= 0.0 <= self.hi:
            raise ValueError("gamma grid must contain 0 (the initial holdings)")

    @property
    def gamma(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.m)

    def widened(self) -> "GammaGrid":
        # double the range, keep the step
        return GammaGrid(2.0 * self.lo, 2.0 * self.hi, 2 * self.m - 1)


def _lipschitz(claim: Claim) -> float:
    if claim.kind in ("call", "put", "asian_call", "asian_put", "lookback_max"):
        return 1.0
    if claim.kind == "tabulated":
        slopes = np.diff(claim.payoff_grid) / np.diff(claim.price_grid)
        return max(1.0, float(np.abs(slopes).max()))
    return 1.0  # constant claims: keep a usable grid anyway


def default_gamma_grid(claim: Claim, m: int = 241) -> GammaGrid:
    lip = _lipschitz(claim)
    return GammaGrid(-2.0 * lip, 2.0 * lip, m)


@dataclass
class Strategy:
    """Post-trade holdings per tree node, plus the initial capital."""

    n: int
    initial_capital: float
    post_trade: list  # post_trade[k] is a (2**k,) array, k = 0..n-1

    def holdings_after(self, k: int, prefix_index: int) -> float:
        return float(self.post_trade[k][prefix_index])


@dataclass
class ExactResult:
    value: float
    strategy: Strategy
    surfaces: list  # surfaces[k] is a (2**k, m) array of minimal capital
    gamma: np.ndarray
    boundary_hit: bool


@dataclass
class LatticeResult:
    value: float
    surfaces: list | None
    gamma: np.ndarray
    boundary_hit: bool


def _edge_hit(g_opt, gamma_in, gamma) -> bool:
    """A real trade pushed to the grid edge means the grid was too narrow."""
    traded = np.abs(g_opt - gamma_in) > 1e-12
    at_edge = (g_opt <= gamma[0]) | (g_opt >= gamma[-1])
    return bool(np.any(traded & at_edge))


def tree_slice_prices(params: MarketParams, k: int) -> np.ndarray:
    """Prices for all 2**k prefixes at time k (prefix bits, up move = 1)."""
    levels = np.zeros(1, dtype=np.int64)
    for _ in range(k):
        levels = np.concatenate([levels - 1, levels + 1]).reshape(2, -1).T.ravel()
    return params.s0 * np.exp(params.sigma * levels / math.sqrt(params.n))


def _tree_levels(k: int) -> np.ndarray:
    levels = np.zeros(1, dtype=np.int64)
    for _ in range(k):
        down = levels - 1
        up = levels + 1
        levels = np.stack([down, up], axis=1).ravel()
    return levels


def tree_prices(params: MarketParams) -> list:
    """Per-slice price arrays; children of prefix b are 2b (down), 2b+1 (up)."""
    out = []
    levels = np.zeros(1, dtype=np.int64)
    scale = params.sigma / math.sqrt(params.n)
    for k in range(params.n + 1):
        out.append(params.s0 * np.exp(scale * levels))
        if k < params.n:
            levels = np.stack([levels - 1, levels + 1], axis=1).ravel()
    return out


def tree_knots(params: MarketParams, prices: list | None = None) -> np.ndarray:
    """Knot matrix (2**n, n+1): the full price path of every terminal prefix."""
    n = params.n
    if prices is None:
        prices = tree_prices(params)
    knots = np.empty((2**n, n + 1))
    b = np.arange(2**n)
    for k in range(n + 1):
        knots[:, k] = prices[k][b >> (n - k)]
    return knots


def terminal_payoffs(params: MarketParams, claim: Claim, prices=None) -> np.ndarray:
    knots = tree_knots(params, prices)
    if markov_dimension(claim) == "terminal-price":
        return payoff_terminal(claim, knots[:, -1])
    return np.array([payoff_eval(claim, interpolate(row)) for row in knots])


def _check_exhaustive(params: MarketParams, cap: int):
    if params.n > cap:
        raise ValueError(
            f"exhaustive engine capped at n <= {cap} (got n={params.n}); "
            "use the lattice engine"
        )


def superrep_exact(
    params: MarketParams,
    penalty: Penalty,
    claim: Claim,
    grid: GammaGrid,
    cap: int = EXHAUSTIVE_CAP,
    widen_retries: int = 2,
) -> ExactResult:
    """Super-replication cost on the full tree, with strategy extraction."""
    _check_exhaustive(params, cap)
    result = _superrep_exact_once(params, penalty, claim, grid)
    while result.boundary_hit and widen_retries > 0:
        grid = grid.widened()
        widen_retries -= 1
        result = _superrep_exact_once(params, penalty, claim, grid)
    return result


def _superrep_exact_once(params, penalty, claim, grid) -> ExactResult:
    n = params.n
    gamma = grid.gamma
    prices = tree_prices(params)
    fhat = terminal_payoffs(params, claim, prices)
    u = params.up_factor

    surfaces = [None] * (n + 1)
    surfaces[n] = np.tile(fhat[:, None], (1, grid.m))
    boundary = False
    for k in range(n - 1, -1, -1):
        c_next = surfaces[k + 1]
        c_dn, c_up = c_next[0::2], c_next[1::2]
        ds_up = prices[k] * (u - 1.0)
        ds_dn = prices[k] * (1.0 / u - 1.0)
        cost = build_trade_cost(penalty, k / n, prices[k], n)
        c_k, g_opt, _ = dp_step(c_up, c_dn, ds_up, ds_dn, gamma, cost)
        boundary = boundary or _edge_hit(
            g_opt, np.tile(gamma, (c_k.shape[0], 1)), gamma
        )
        surfaces[k] = c_k

    # forward pass: realized holdings and the exact root value
    post_trade = []
    gamma_in = np.zeros(1)
    value = None
    for k in range(n):
        c_next = surfaces[k + 1]
        c_dn, c_up = c_next[0::2], c_next[1::2]
        ds_up = prices[k] * (u - 1.0)
        ds_dn = prices[k] * (1.0 / u - 1.0)
        cost = build_trade_cost(penalty, k / n, prices[k], n)
        val, g_out, _ = best_trade(c_up, c_dn, ds_up, ds_dn, gamma, cost, gamma_in)
        boundary = boundary or _edge_hit(g_out, gamma_in, gamma)
        if k == 0:
            value = float(val[0])
        post_trade.append(g_out)
        gamma_in = np.repeat(g_out, 2)  # both children inherit the holdings
    strategy = Strategy(n=n, initial_capital=value, post_trade=post_trade)
    return ExactResult(value, strategy, surfaces, gamma, boundary)


def superrep_lattice(
    params: MarketParams,
    penalty: Penalty,
    claim: Claim,
    grid: GammaGrid,
    avg_buckets: int | None = None,
    keep_surfaces: bool = False,
    widen_retries: int = 2,
) -> LatticeResult:
    """Super-replication cost on the recombining lattice (Markovian inputs)."""
    dim = markov_dimension(claim)
    if dim == "full-path":
        raise ValueError(f"lattice engine refuses full-path claims ({claim.kind})")
    result = _superrep_lattice_once(params, penalty, claim, grid,
                                    avg_buckets, keep_surfaces)
    while result.boundary_hit and widen_retries > 0:
        grid = grid.widened()
        widen_retries -= 1
        result = _superrep_lattice_once(params, penalty, claim, grid,
                                        avg_buckets, keep_surfaces)
    return result


def _superrep_lattice_once(params, penalty, claim, grid, avg_buckets,
                           keep_surfaces) -> LatticeResult:
    if markov_dimension(claim) == "terminal-price":
        return _lattice_terminal(params, penalty, claim, grid, keep_surfaces)
    return _lattice_average(params, penalty, claim, grid,
                            avg_buckets or 101, keep_surfaces)


def _lattice_terminal(params, penalty, claim, grid, keep_surfaces) -> LatticeResult:
    n = params.n
    gamma = grid.gamma
    u = params.up_factor
    fhat = payoff_terminal(claim, slice_prices(params, n))
    c_next = np.tile(fhat[:, None], (1, grid.m))
    surfaces = [c_next] if keep_surfaces else None
    boundary = False
    for k in range(n - 1, 0, -1):
        s_k = slice_prices(params, k)
        cost = build_trade_cost(penalty, k / n, s_k, n)
        c_next, hit = backend.lattice_step(
            c_next, s_k * (u - 1.0), s_k * (1.0 / u - 1.0), gamma, cost
        )
        boundary = boundary or hit
        if keep_surfaces:
            surfaces.insert(0, c_next)
    # root: exact value at gamma = 0
    cost = build_trade_cost(penalty, 0.0, np.array([params.s0]), n)
    val, g_out, _ = best_trade(
        c_next[1:2], c_next[0:1],
        np.array([params.s0 * (u - 1.0)]), np.array([params.s0 * (1.0 / u - 1.0)]),
        gamma, cost, np.zeros(1),
    )
    boundary = boundary or _edge_hit(g_out, np.zeros(1), gamma)
    return LatticeResult(float(val[0]), surfaces, gamma, boundary)


def _avg_increments(claim: Claim):
    """Per-step increment of the averaging statistic, and its final scaling."""
    if claim.use_knot_mean:
        # knot mean: track sum of knots excluding s0; add s0 at the end
        return (lambda s_now, s_next, n: s_next), (lambda tot, s0, n: (tot + s0) / (n + 1))
    # exact time integral: trapezoid increments
    return (
        lambda s_now, s_next, n: (s_now + s_next) / (2.0 * n),
        lambda tot, s0, n: tot,
    )


def _lattice_average(params, penalty, claim, grid, buckets, keep_surfaces):
    """Hull-White style running-average augmentation for Asian claims."""
    n = params.n
    gamma = grid.gamma
    u = params.up_factor
    inc, finish = _avg_increments(claim)

    # bucket ranges per slice from the monotone extreme paths
    lo_tot = np.zeros(n + 1)
    hi_tot = np.zeros(n + 1)
    s_dn = params.s0 * np.exp(-params.sigma * np.arange(n + 1) / math.sqrt(n))
    s_up = params.s0 * np.exp(params.sigma * np.arange(n + 1) / math.sqrt(n))
    for k in range(n):
        lo_tot[k + 1] = lo_tot[k] + inc(s_dn[k], s_dn[k + 1], n)
        hi_tot[k + 1] = hi_tot[k] + inc(s_up[k], s_up[k + 1], n)

    def bucket_grid(k):
        if lo_tot[k] == hi_tot[k]:
            return np.array([lo_tot[k]])
        return np.linspace(lo_tot[k], hi_tot[k], buckets)

    # terminal values per (level, bucket)
    s_term = slice_prices(params, n)
    bg = bucket_grid(n)
    avg = np.array([finish(t, params.s0, n) for t in bg])
    if claim.kind == "asian_call":
        fhat = np.maximum(avg[None, :] - claim.strike, 0.0)
    else:
        fhat = np.maximum(claim.strike - avg[None, :], 0.0)
    fhat = np.broadcast_to(fhat, (n + 1, bg.size)).copy()

    c_next = np.tile(fhat[:, :, None], (1, 1, grid.m))  # (levels, buckets, m)
    surfaces = [c_next] if keep_surfaces else None
    boundary = False
    for k in range(n - 1, -1, -1):
        s_k = slice_prices(params, k)
        s_k1 = slice_prices(params, k + 1)
        bg_k = bucket_grid(k)
        bg_k1 = bucket_grid(k + 1)
        L, B = s_k.size, bg_k.size

        def child(level_next_idx):
            # value surface of the child node, re-bucketed to slice-k buckets
            out = np.empty((L, B, grid.m))
            for l in range(L):
                ln = level_next_idx(l)
                t_next = bg_k + inc(s_k[l], s_k1[ln], n)
                if bg_k1.size == 1:
                    out[l] = c_next[ln, 0][None, :]
                    continue
                step = bg_k1[1] - bg_k1[0]
                idx = np.clip(((t_next - bg_k1[0]) / step).astype(int), 0,
                              bg_k1.size - 2)
                w = np.clip((t_next - bg_k1[idx]) / step, 0.0, 1.0)
                out[l] = (c_next[ln, idx] * (1.0 - w[:, None])
                          + c_next[ln, idx + 1] * w[:, None])
            return out

        c_up = child(lambda l: l + 1).reshape(L * B, grid.m)
        c_dn = child(lambda l: l).reshape(L * B, grid.m)
        ds_up = np.repeat(s_k * (u - 1.0), B)
        ds_dn = np.repeat(s_k * (1.0 / u - 1.0), B)
        cost = build_trade_cost(penalty, k / n, np.repeat(s_k, B), n)
        if k == 0:
            val, g_out, _ = best_trade(c_up, c_dn, ds_up, ds_dn, gamma, cost,
                                       np.zeros(1))
            boundary = boundary or _edge_hit(g_out, np.zeros(1), gamma)
            return LatticeResult(float(val[0]), surfaces, gamma, boundary)
        c_k, g_opt, _ = dp_step(c_up, c_dn, ds_up, ds_dn, gamma, cost)
        boundary = boundary or _edge_hit(
            g_opt, np.tile(gamma, (c_k.shape[0], 1)), gamma
        )
        c_next = c_k.reshape(L, B, grid.m)
        if keep_surfaces:
            surfaces.insert(0, c_next)
    raise AssertionError("unreachable")


def wealth_simulate(
    params: MarketParams,
    penalty: Penalty,
    strategy: Strategy,
    moves,
    x: float | None = None,
) -> float:
    """Forward wealth recursion along one realized path of +-1 moves."""
    n = params.n
    if len(moves) != n:
        raise ValueError(f"need {n} moves, got {len(moves)}")
    scale = params.sigma / math.sqrt(n)
    logs = scale * np.concatenate([[0.0], np.cumsum(moves)])
    knots = params.s0 * np.exp(logs)
    path = interpolate(knots)
    y = strategy.initial_capital if x is None else x
    gamma_prev = 0.0
    b = 0
    for k in range(n):
        g_next = strategy.holdings_after(k, b)
        y += g_next * (knots[k + 1] - knots[k])
        y -= g_eval(penalty, k / n, path, g_next - gamma_prev, n)
        gamma_prev = g_next
        b = 2 * b + (1 if moves[k] == 1 else 0)
    return float(y)


def verify_superreplication(
    params: MarketParams,
    penalty: Penalty,
    strategy: Strategy,
    claim: Claim,
    x: float,
    cap: int = EXHAUSTIVE_CAP,
):
    """Worst-case slack Y(n) - F over all 2**n paths; negative means failure."""
    _check_exhaustive(params, cap)
    n = params.n
    worst = math.inf
    worst_path = None
    for b in range(2**n):
        moves = [1 if (b >> (n - 1 - k)) & 1 else -1 for k in range(n)]
        y = wealth_simulate(params, penalty, strategy, moves, x=x)
        scale = params.sigma / math.sqrt(n)
        knots = params.s0 * np.exp(scale * np.concatenate([[0.0], np.cumsum(moves)]))
        f = payoff_eval(claim, interpolate(knots))
        slack = y - f
        if slack < worst:
            worst = slack
            worst_path = moves
    return worst, worst_path


def save_strategy(strategy: Strategy, path) -> None:
    """Structured-text export: one record per node (k, prefix index, holdings)."""
    with open(path, "w") as fh:
        fh.write(f"# frictionlab strategy n={strategy.n} "
                 f"x={strategy.initial_capital!r}\n")
        for k, arr in enumerate(strategy.post_trade):
            for b, g in enumerate(arr):
                fh.write(f"{k} {b} {float(g)!r}\n")


def load_strategy(path) -> Strategy:
    with open(path) as fh:
        fields = dict(
            tok.split("=", 1) for tok in fh.readline().split() if "=" in tok
        )
        n = int(fields["n"])
        x = float(fields["x"])
        post_trade = [np.zeros(2**k) for k in range(n)]
        for line in fh:
            k_s, b_s, g_s = line.split()
            post_trade[int(k_s)][int(b_s)] = float(g_s)
    return Strategy(n=n, initial_capital=x, post_trade=post_trade)
