"""Primal (super-replication) engines."""
from .costmodel import TradeCost, build_trade_cost
from .engine import (
    ExactResult,
    GammaGrid,
    LatticeResult,
    Strategy,
    default_gamma_grid,
    load_strategy,
    save_strategy,
    superrep_exact,
    superrep_lattice,
    verify_superreplication,
    wealth_simulate,
)
from .innermin import best_trade, dp_step

__all__ = [
    "TradeCost",
    "build_trade_cost",
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
    "best_trade",
    "dp_step",
]
