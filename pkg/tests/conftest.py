import math

import numpy as np
import pytest

from frictionlab.market import MarketParams


@pytest.fixture
def market4():
    return MarketParams(n=4, sigma=0.2, s0=100.0)


def crr_price(params: MarketParams, payoff_terminal) -> float:
    """Independent binomial pricing oracle: direct binomial-weight sum."""
    n = params.n
    u = params.up_factor
    q = (1.0 - 1.0 / u) / (u - 1.0 / u)
    total = 0.0
    for k in range(n + 1):
        s = params.s0 * u ** (2 * k - n)
        total += math.comb(n, k) * q**k * (1.0 - q) ** (n - k) * payoff_terminal(s)
    return total


def random_tree_path(params: MarketParams, rng) -> np.ndarray:
    moves = rng.choice([-1, 1], size=params.n)
    logs = params.sigma / math.sqrt(params.n) * np.concatenate(
        [[0.0], np.cumsum(moves)]
    )
    return params.s0 * np.exp(logs)
