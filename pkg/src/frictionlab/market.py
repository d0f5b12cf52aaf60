"""Binomial market geometry and piecewise-linear price paths.

An n-step market moves the log-price by +-sigma/sqrt(n) per step, so the
stock price after the moves ``xi_1..xi_k`` is ``s0 * exp(sigma/sqrt(n) *
sum(xi))``.  Prices are always evaluated from this closed form (never by
multiplicative accumulation) so that a node's price does not depend on the
traversal order used to reach it.

Paths seen by payoffs and trading costs are the linear interpolation of the
n+1 price knots on [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MarketParams",
    "PLPath",
    "stock_price",
    "lattice_price",
    "lattice_levels",
    "slice_prices",
    "interpolate",
    "validate_prefix",
    "validate_node",
]

#: default cap for engines that enumerate all 2^n paths
EXHAUSTIVE_CAP = 14


@dataclass(frozen=True)
class MarketParams:
    """The triple (n, sigma, s0) defining an n-step binomial market."""

    n: int
    sigma: float
    s0: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")

    @property
    def up_factor(self) -> float:
        return math.exp(self.sigma / math.sqrt(self.n))


def validate_prefix(params: MarketParams, moves) -> None:
    if len(moves) > params.n:
        raise ValueError(f"prefix of length {len(moves)} in an n={params.n} market")
    for m in moves:
        if m not in (-1, 1):
            raise ValueError(f"moves must be +-1, got {m!r}")


def validate_node(k: int, level: int, n: int | None = None) -> None:
    if k < 0 or (n is not None and k > n):
        raise ValueError(f"time index {k} out of range")
    if abs(level) > k or (level - k) % 2 != 0:
        raise ValueError(f"invalid lattice node (k={k}, level={level})")


def stock_price(params: MarketParams, moves) -> float:
    """Price after the +-1 moves of a path prefix (closed form)."""
    validate_prefix(params, moves)
    return params.s0 * math.exp(params.sigma * sum(moves) / math.sqrt(params.n))


def lattice_price(params: MarketParams, k: int, level: int) -> float:
    """Price at the recombining-lattice node (k, level), level = sum of moves."""
    validate_node(k, level, params.n)
    return params.s0 * math.exp(params.sigma * level / math.sqrt(params.n))


def lattice_levels(k: int) -> np.ndarray:
    """Levels reachable at time index k: -k, -k+2, ..., k."""
    return np.arange(-k, k + 1, 2)


def slice_prices(params: MarketParams, k: int) -> np.ndarray:
    """Prices of all lattice nodes at time index k, in level order."""
    return params.s0 * np.exp(params.sigma * lattice_levels(k) / math.sqrt(params.n))


@dataclass(frozen=True)
class PLPath:
    """Piecewise-linear path on [0,1] given by n+1 strictly positive knots."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a path needs at least two knots")
        if not np.all(knots > 0):
            raise ValueError("path knots must be strictly positive")
        object.__setattr__(self, "knots", knots)

    @property
    def n(self) -> int:
        return self.knots.size - 1

    def eval(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t={t} outside [0,1]")
        nt = self.n * t
        k = min(int(nt), self.n - 1)
        w = nt - k
        return (1.0 - w) * self.knots[k] + w * self.knots[k + 1]

    def max(self) -> float:
        # the max of a PL function is attained at a knot
        return float(np.max(self.knots))

    def average(self) -> float:
        """Exact time integral over [0,1] (trapezoid is exact for PL paths)."""
        v = self.knots
        return float((0.5 * (v[:-1] + v[1:])).sum() / self.n)


def interpolate(values) -> PLPath:
    """Wrap n+1 price knots as the interpolated path W_n(values)."""
    return PLPath(np.asarray(values, dtype=float))
