"""frictionlab: super-replication pricing in binomial markets with convex
trading friction, with dual (martingale-measure) certificates and the
scaling-limit PDE."""

__version__ = "0.1.0"

from . import friction, market, payoffs
from .market import MarketParams
from .friction import Penalty
from .payoffs import Claim

__all__ = [
    "__version__",
    "market",
    "friction",
    "payoffs",
    "MarketParams",
    "Penalty",
    "Claim",
]
