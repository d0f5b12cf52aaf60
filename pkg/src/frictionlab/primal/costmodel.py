"""Per-node trade-cost descriptors used by the DP inner minimization.

The DP kernels work on batches of nodes ("rows").  A ``TradeCost`` flattens a
penalty at a fixed time slice into per-row closed-form coefficients so the
hot loops never call back into the penalty object.  Penalties without a
closed form are carried as per-row callables (kind GENERIC) and are only
supported by the numpy backend.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import friction
from ..friction import Penalty

KIND_ZERO = 0
KIND_QUAD = 1
KIND_LIN = 2
KIND_TRUNCQUAD = 3
KIND_GENERIC = 4

__all__ = [
    "TradeCost",
    "build_trade_cost",
    "KIND_ZERO",
    "KIND_QUAD",
    "KIND_LIN",
    "KIND_TRUNCQUAD",
    "KIND_GENERIC",
]


class _ConstPath:
    """Path stub exposing only the current price; enough for price-scaled costs."""

    def __init__(self, price: float):
        self._price = float(price)

    def eval(self, t: float) -> float:
        return self._price


@dataclass
class TradeCost:
    kind: int
    rows: int
    lam: np.ndarray | None = None  # (R,) quadratic coefficient
    lin: np.ndarray | None = None  # (R,) linear coefficient
    kink: np.ndarray | None = None  # (R,) |nu| where quadratic turns linear
    off: np.ndarray | None = None  # (R,) offset subtracted on the linear branch
    generic: list | None = None  # per-row callables nu-array -> cost-array

    def eval(self, row_idx: np.ndarray, dnu: np.ndarray) -> np.ndarray:
        """Exact cost of trading dnu shares, rows selected by row_idx.

        ``row_idx`` and ``dnu`` broadcast to a common shape.
        """
        if self.kind == KIND_ZERO:
            return np.zeros(np.broadcast(row_idx, dnu).shape)
        if self.kind == KIND_QUAD:
            return self.lam[row_idx] * dnu * dnu
        if self.kind == KIND_LIN:
            return self.lin[row_idx] * np.abs(dnu)
        if self.kind == KIND_TRUNCQUAD:
            a = np.abs(dnu)
            quad = self.lam[row_idx] * dnu * dnu
            lin = self.lin[row_idx] * a - self.off[row_idx]
            return np.where(a <= self.kink[row_idx], quad, lin)
        # generic: scalar python loop, numpy backend only
        row_idx, dnu = np.broadcast_arrays(row_idx, dnu)
        out = np.empty(row_idx.shape)
        flat_r, flat_d, flat_o = row_idx.ravel(), dnu.ravel(), out.ravel()
        for i in range(flat_r.size):
            flat_o[i] = self.generic[flat_r[i]](float(flat_d[i]))
        return out


def build_trade_cost(
    penalty: Penalty,
    t: float,
    prices: np.ndarray,
    n: int,
    paths=None,
) -> TradeCost:
    """Flatten a penalty at time t into per-row coefficients.

    ``prices`` holds the current stock price per row; ``paths`` optionally
    holds the realized price path per row for path-dependent penalties.
    """
    prices = np.asarray(prices, dtype=float)
    rows = prices.size
    sqn = math.sqrt(n)
    kind = penalty.kind

    if kind in ("proportional", "truncated_zero"):
        if penalty.c == 0.0:
            return TradeCost(KIND_ZERO, rows)
        return TradeCost(KIND_LIN, rows, lin=penalty.c / sqn * prices)

    if kind == "quadratic":
        lam = penalty.lam * (prices if penalty.price_scaled else np.ones(rows))
        return TradeCost(KIND_QUAD, rows, lam=lam)

    if kind == "truncated_quadratic":
        lin = penalty.c / sqn * prices
        kink = penalty.c * prices / (2.0 * sqn * penalty.lam)
        off = penalty.c**2 * prices**2 / (4.0 * n * penalty.lam)
        return TradeCost(
            KIND_TRUNCQUAD,
            rows,
            lam=np.full(rows, penalty.lam),
            lin=lin,
            kink=kink,
            off=off,
        )

    if kind == "power":
        if penalty.gamma == 2.0:
            lam = 0.5 * (prices if penalty.price_scaled else np.ones(rows))
            return TradeCost(KIND_QUAD, rows, lam=lam)
        if penalty.gamma == 1.0:
            lin = prices if penalty.price_scaled else np.ones(rows)
            return TradeCost(KIND_LIN, rows, lin=lin.astype(float))

    # everything else: per-row callables
    if paths is None:
        paths = [_ConstPath(s) for s in prices]
    gen = [
        (lambda nu, p=path: friction.g_eval(penalty, t, p, nu, n)) for path in paths
    ]
    return TradeCost(KIND_GENERIC, rows, generic=gen)
