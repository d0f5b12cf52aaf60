"""Experiment configuration: JSON file with a versioned schema.

A config file fully determines a run; environment variables prefixed
``FRICTIONLAB_`` override scalar fields (seed, threads, out, gap_threshold,
engine mode), and CLI flags override both.  Re-running the same config with
the same seed produces byte-identical outputs.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import friction, payoffs
from .friction import Penalty
from .market import MarketParams
from .payoffs import Claim

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "apply_env_overrides"]

SCHEMA_VERSION = 1

_ENV_PREFIX = "FRICTIONLAB_"


class ConfigError(ValueError):
    """Invalid configuration; mapped to exit code 2 by the CLI."""


@dataclass
class ExperimentConfig:
    n_list: list
    sigma: float
    s0: float
    penalty: Penalty
    claim: Claim
    truncate_at: float | None = None
    engine_mode: str = "auto"  # auto | exact | lattice
    gamma_points: int = 241
    gamma_bound: float = 2.0
    avg_buckets: int = 101
    q_resolution: float = 1e-3
    ascent_steps: int = 400
    ascent_starts: int = 5
    kusuoka_a: float | None = None
    hjb_nx: int = 801
    hjb_na: int = 201
    hjb_level: float | None = None  # admissibility level for limit solves
    strategy_path: str | None = None
    seed: int = 0
    threads: int = 1
    gap_threshold: float = 1e-3
    timings: bool = False
    out_dir: str = "."

    def market(self, n: int) -> MarketParams:
        return MarketParams(n=n, sigma=self.sigma, s0=self.s0)

    def effective_penalty(self) -> Penalty:
        if self.truncate_at is not None:
            return friction.truncate(self.penalty, self.truncate_at, 1)
        return self.penalty

    def limit_level(self) -> float:
        if self.hjb_level is not None:
            return self.hjb_level
        if self.truncate_at is not None:
            return self.truncate_at
        if self.penalty.c > 0:
            return self.penalty.c
        return 0.25


def _build_penalty(spec: dict) -> Penalty:
    kind = spec.get("kind")
    try:
        if kind == "quadratic":
            return friction.quadratic(spec["lam"],
                                      spec.get("price_scaled", False))
        if kind == "proportional":
            return friction.proportional(spec["c"])
        if kind == "truncated_zero":
            return friction.truncated_zero(spec["c"])
        if kind == "truncated_quadratic":
            return friction.truncated_quadratic(spec["lam"], spec["c"])
        if kind == "power":
            return friction.power(spec["gamma"])
        if kind == "tabulated":
            return friction.load_tabulated_penalty(spec["table"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"penalty: {exc}") from exc
    raise ConfigError(f"penalty: unknown kind {kind!r}")


def _build_claim(spec: dict) -> Claim:
    kind = spec.get("kind")
    try:
        if kind == "constant":
            return payoffs.constant(spec["strike"])
        if kind == "call":
            return payoffs.call(spec["strike"])
        if kind == "put":
            return payoffs.put(spec["strike"])
        if kind == "asian_call":
            return payoffs.asian_call(spec["strike"],
                                      spec.get("use_knot_mean", False))
        if kind == "asian_put":
            return payoffs.asian_put(spec["strike"],
                                     spec.get("use_knot_mean", False))
        if kind == "lookback_max":
            return payoffs.lookback_max(spec["strike"])
        if kind == "tabulated":
            return payoffs.load_tabulated_payoff(spec["table"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"claim: {exc}") from exc
    raise ConfigError(f"claim: unknown kind {kind!r}")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema must be {SCHEMA_VERSION}, got {raw.get('schema')!r}"
        )
    try:
        market = raw["market"]
        n_list = list(market["n"])
        if not n_list or any(
            b <= a for a, b in zip(n_list, n_list[1:])
        ) or any(int(n) != n or n < 1 for n in n_list):
            raise ConfigError("market.n must be a nonempty increasing list "
                              "of positive integers")
        cfg = ExperimentConfig(
            n_list=[int(n) for n in n_list],
            sigma=float(market["sigma"]),
            s0=float(market["s0"]),
            penalty=_build_penalty(raw["penalty"]),
            claim=_build_claim(raw["claim"]),
        )
    except KeyError as exc:
        raise ConfigError(f"missing config section: {exc}") from exc

    cfg.truncate_at = raw.get("truncate_at")
    if cfg.truncate_at is not None:
        cfg.truncate_at = float(cfg.truncate_at)

    eng = raw.get("engine", {})
    cfg.engine_mode = eng.get("mode", "auto")
    if cfg.engine_mode not in ("auto", "exact", "lattice"):
        raise ConfigError(f"engine.mode invalid: {cfg.engine_mode!r}")
    cfg.gamma_points = int(eng.get("gamma_points", cfg.gamma_points))
    cfg.gamma_bound = float(eng.get("gamma_bound", cfg.gamma_bound))
    cfg.avg_buckets = int(eng.get("avg_buckets", cfg.avg_buckets))

    dual = raw.get("dual", {})
    cfg.q_resolution = float(dual.get("q_resolution", cfg.q_resolution))
    cfg.ascent_steps = int(dual.get("steps", cfg.ascent_steps))
    cfg.ascent_starts = int(dual.get("starts", cfg.ascent_starts))
    if "kusuoka_a" in dual and dual["kusuoka_a"] is not None:
        cfg.kusuoka_a = float(dual["kusuoka_a"])

    hjb = raw.get("hjb", {})
    cfg.hjb_nx = int(hjb.get("nx", cfg.hjb_nx))
    cfg.hjb_na = int(hjb.get("na", cfg.hjb_na))
    if "level" in hjb and hjb["level"] is not None:
        cfg.hjb_level = float(hjb["level"])

    cfg.strategy_path = raw.get("strategy_path")
    cfg.seed = int(raw.get("seed", 0))
    cfg.threads = int(raw.get("threads", 1))
    cfg.gap_threshold = float(raw.get("gap_threshold", cfg.gap_threshold))
    cfg.timings = bool(raw.get("timings", False))
    cfg.out_dir = raw.get("out", ".")

    if cfg.seed < 0 or cfg.threads < 1:
        raise ConfigError("seed must be >= 0 and threads >= 1")
    return cfg


def apply_env_overrides(cfg: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Scalar overrides from FRICTIONLAB_* environment variables."""
    env = os.environ if environ is None else environ

    def get(name):
        return env.get(_ENV_PREFIX + name)

    try:
        if get("SEED") is not None:
            cfg.seed = int(get("SEED"))
        if get("THREADS") is not None:
            cfg.threads = int(get("THREADS"))
        if get("OUT") is not None:
            cfg.out_dir = get("OUT")
        if get("GAP_THRESHOLD") is not None:
            cfg.gap_threshold = float(get("GAP_THRESHOLD"))
        if get("ENGINE_MODE") is not None:
            mode = get("ENGINE_MODE")
            if mode not in ("auto", "exact", "lattice"):
                raise ConfigError(f"FRICTIONLAB_ENGINE_MODE invalid: {mode!r}")
            cfg.engine_mode = mode
    except ValueError as exc:
        raise ConfigError(f"environment override: {exc}") from exc
    if cfg.seed < 0 or cfg.threads < 1:
        raise ConfigError("seed must be >= 0 and threads >= 1")
    return cfg
