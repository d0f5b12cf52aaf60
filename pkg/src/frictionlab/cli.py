"""Command-line interface and experiment orchestration.

Subcommands: price, dual, converge, hjb, verify, premium.  All consume a
JSON config (``--config``) and write CSV/text reports into ``--out``.

Exit codes: 0 success, 2 invalid config, 3 acceptance-threshold breach,
4 engine refusal.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dual as dual_mod
from . import friction
from .config import ConfigError, ExperimentConfig, apply_env_overrides, load_config
from .limit_pde import (
    HJBGrid,
    LimitSpec,
    bs_closed_form,
    default_grid,
    export_surface_csv,
    hjb_solve,
    j_constant_alpha,
)
from .market import EXHAUSTIVE_CAP
from .payoffs import markov_dimension
from .primal import (
    GammaGrid,
    load_strategy,
    save_strategy,
    superrep_exact,
    superrep_lattice,
    verify_superreplication,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_THRESHOLD = 3
EXIT_REFUSAL = 4


class EngineRefusal(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _gamma_grid(cfg: ExperimentConfig) -> GammaGrid:
    return GammaGrid(-cfg.gamma_bound, cfg.gamma_bound, cfg.gamma_points)


def _solve_primal(cfg: ExperimentConfig, n: int):
    params = cfg.market(n)
    pen = cfg.effective_penalty()
    grid = _gamma_grid(cfg)
    mode = cfg.engine_mode
    if mode == "exact" or (mode == "auto" and n <= EXHAUSTIVE_CAP):
        try:
            return superrep_exact(params, pen, cfg.claim, grid), "exact"
        except ValueError as exc:
            if mode == "exact":
                raise EngineRefusal(str(exc)) from exc
    try:
        return (
            superrep_lattice(params, pen, cfg.claim, grid,
                             avg_buckets=cfg.avg_buckets),
            "lattice",
        )
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc


def _solve_dual(cfg: ExperimentConfig, n: int):
    params = cfg.market(n)
    pen = cfg.effective_penalty()
    if n <= 3:
        return dual_mod.dual_brute_force(params, pen, cfg.claim,
                                         cfg.q_resolution), "brute-force"
    if n <= EXHAUSTIVE_CAP:
        return dual_mod.dual_ascent(params, pen, cfg.claim,
                                    steps=cfg.ascent_steps,
                                    starts=cfg.ascent_starts,
                                    seed=cfg.seed), "ascent"
    try:
        return dual_mod.dual_ascent_lattice(params, pen, cfg.claim,
                                            steps=cfg.ascent_steps,
                                            starts=min(cfg.ascent_starts, 3),
                                            seed=cfg.seed), "lattice-ascent"
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc


def _limit_value(cfg: ExperimentConfig):
    """Continuous-time limit of the truncated prices, per the cost's scaling."""
    pen = cfg.effective_penalty()
    level = cfg.limit_level()
    try:
        g_hat = friction.scaled_limit(pen)
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc
    if g_hat.kind == "zero" and cfg.claim.kind in ("call", "put"):
        # frictionless-in-the-limit: closed form at the inflated volatility
        vol = math.sqrt(cfg.sigma * (cfg.sigma + 2.0 * level))
        return bs_closed_form(cfg.claim.kind, cfg.s0, cfg.claim.strike, vol)
    try:
        spec = LimitSpec(level, g_hat, cfg.sigma, cfg.s0)
        sol = hjb_solve(spec, cfg.claim,
                        default_grid(spec, nx=cfg.hjb_nx, na=cfg.hjb_na))
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc
    return sol.value


# ---------------------------------------------------------------------------
# subcommands


def run_price(cfg: ExperimentConfig) -> int:
    rows = []
    for n in cfg.n_list:
        t0 = time.perf_counter()
        result, engine = _solve_primal(cfg, n)
        row = [n, result.value, engine, int(result.boundary_hit)]
        if cfg.timings:
            row.append((time.perf_counter() - t0) * 1e3)
        rows.append(row)
        if engine == "exact":
            save_strategy(result.strategy,
                          os.path.join(cfg.out_dir, f"strategy_n{n}.txt"))
        print(f"n={n}: primal={result.value:.12g} ({engine})")
    header = ["n", "primal", "engine", "boundary_hit"]
    if cfg.timings:
        header.append("runtime_ms")
    _write_csv(os.path.join(cfg.out_dir, "price.csv"), header, rows)
    return EXIT_OK


def run_duality_check(cfg: ExperimentConfig) -> int:
    """Primal vs dual gap table; threshold breach exits nonzero."""
    rows = []
    breach = False
    for n in cfg.n_list:
        primal, engine = _solve_primal(cfg, n)
        report, method = _solve_dual(cfg, n)
        gap = primal.value - report.value
        rel = abs(gap) / max(abs(primal.value), 1e-30)
        rows.append([n, primal.value, report.value, gap, rel, method,
                     report.iterations])
        print(f"n={n}: primal={primal.value:.12g} dual={report.value:.12g} "
              f"rel_gap={rel:.3e} ({method})")
        if rel > cfg.gap_threshold:
            breach = True
    _write_csv(
        os.path.join(cfg.out_dir, "duality.csv"),
        ["n", "primal", "dual", "gap", "rel_gap", "dual_method", "iterations"],
        rows,
    )
    return EXIT_THRESHOLD if breach else EXIT_OK


def run_convergence(cfg: ExperimentConfig) -> int:
    """One row per n: primal, dual bound, optional tilt bound, limit, gap."""
    if markov_dimension(cfg.claim) == "full-path" and any(
        n > EXHAUSTIVE_CAP for n in cfg.n_list
    ):
        raise EngineRefusal(
            "full-path claims cannot run a convergence study beyond the "
            f"exhaustive cap (n <= {EXHAUSTIVE_CAP})"
        )
    limit = _limit_value(cfg)
    pen = cfg.effective_penalty()

    def one_row(n):
        t0 = time.perf_counter()
        primal, _ = _solve_primal(cfg, n)
        try:
            dual_rep, _ = _solve_dual(cfg, n)
            dual_val = dual_rep.value
        except EngineRefusal:
            dual_val = math.nan
        kus = math.nan
        if cfg.kusuoka_a is not None:
            try:
                kus = dual_mod.kusuoka_lower_bound(cfg.market(n), pen,
                                                   cfg.claim, cfg.kusuoka_a)
            except ValueError:
                kus = math.nan
        row = [n, primal.value, dual_val, kus, limit, primal.value - limit]
        if cfg.timings:
            row.append((time.perf_counter() - t0) * 1e3)
        return row

    # rows run concurrently, output buffered in config order
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(one_row, cfg.n_list))
    else:
        rows = [one_row(n) for n in cfg.n_list]

    gaps = [abs(r[5]) for r in rows]
    trend_ok = len(gaps) < 3 or (gaps[-3] > gaps[-2] > gaps[-1])
    for r in rows:
        print(f"n={r[0]}: primal={r[1]:.12g} dual={r[2]:.12g} "
              f"limit={r[4]:.12g} gap={r[5]:+.6g}")
    print(f"trend: |primal - limit| decreasing over last 3: {trend_ok}")

    header = ["n", "primal", "dual_bound", "kusuoka_bound", "limit", "gap"]
    if cfg.timings:
        header.append("runtime_ms")
    _write_csv(os.path.join(cfg.out_dir, "convergence.csv"), header, rows)
    with open(os.path.join(cfg.out_dir, "convergence_trend.txt"), "w") as fh:
        fh.write(f"decreasing_last3={trend_ok}\n")
    return EXIT_OK if trend_ok else EXIT_THRESHOLD


def run_hjb(cfg: ExperimentConfig) -> int:
    pen = cfg.effective_penalty()
    try:
        g_hat = friction.scaled_limit(pen)
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc
    try:
        spec = LimitSpec(cfg.limit_level(), g_hat, cfg.sigma, cfg.s0)
        sol = hjb_solve(spec, cfg.claim,
                        default_grid(spec, nx=cfg.hjb_nx, na=cfg.hjb_na))
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc
    print(f"limit value at s0: {sol.value:.12g}")
    _write_csv(os.path.join(cfg.out_dir, "hjb_value.csv"),
               ["s0", "level", "value"],
               [[cfg.s0, cfg.limit_level(), sol.value]])
    export_surface_csv(sol, os.path.join(cfg.out_dir, "hjb_surface.csv"))
    return EXIT_OK


def run_verify(cfg: ExperimentConfig) -> int:
    if not cfg.strategy_path:
        raise ConfigError("verify needs strategy_path in the config")
    strategy = load_strategy(cfg.strategy_path)
    params = cfg.market(strategy.n)
    pen = cfg.effective_penalty()
    try:
        slack, worst_path = verify_superreplication(
            params, pen, strategy, cfg.claim, strategy.initial_capital
        )
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc
    ok = slack >= -1e-8
    print(f"min slack over all paths: {slack:.12g} "
          f"({'super-replicates' if ok else 'FAILS'})")
    _write_csv(os.path.join(cfg.out_dir, "verify.csv"),
               ["n", "capital", "min_slack", "passes"],
               [[strategy.n, strategy.initial_capital, slack, int(ok)]])
    return EXIT_OK if ok else EXIT_THRESHOLD


def run_premium_probe(cfg: ExperimentConfig) -> int:
    """Limit value at the admissibility level vs the frictionless price."""
    if cfg.claim.kind not in ("call", "put", "tabulated"):
        raise ConfigError("premium probe needs a convex terminal-price claim")
    pen = cfg.effective_penalty()
    try:
        g_hat = friction.scaled_limit(pen)
    except ValueError as exc:
        raise EngineRefusal(str(exc)) from exc
    eps = cfg.limit_level()
    baseline = (bs_closed_form(cfg.claim.kind, cfg.s0, cfg.claim.strike,
                               cfg.sigma)
                if cfg.claim.kind in ("call", "put")
                else hjb_solve(LimitSpec(0.0, g_hat, cfg.sigma, cfg.s0),
                               cfg.claim).value)
    if g_hat.kind == "zero" and cfg.claim.kind in ("call", "put"):
        vol = math.sqrt(cfg.sigma * (cfg.sigma + 2.0 * eps))
        limit_val = bs_closed_form(cfg.claim.kind, cfg.s0, cfg.claim.strike,
                                   vol)
    else:
        try:
            spec = LimitSpec(eps, g_hat, cfg.sigma, cfg.s0)
            limit_val = hjb_solve(spec, cfg.claim,
                                  default_grid(spec, nx=cfg.hjb_nx,
                                               na=cfg.hjb_na)).value
        except ValueError as exc:
            raise EngineRefusal(str(exc)) from exc
    const_bound = math.nan
    if g_hat.kind == "quadratic" and cfg.claim.kind == "call" \
            and not g_hat.price_scaled:
        lam = 1.0 / (4.0 * g_hat.quad_coef)
        scan = np.linspace(0.0, eps, 51)
        const_bound = max(
            j_constant_alpha(a, lam, cfg.sigma, cfg.s0, cfg.claim.strike)
            for a in scan
        )
    premium = limit_val - baseline
    print(f"frictionless: {baseline:.12g}")
    print(f"limit value at level {eps}: {limit_val:.12g}")
    print(f"premium estimate: {premium:.12g}")
    _write_csv(os.path.join(cfg.out_dir, "premium.csv"),
               ["level", "baseline", "limit_value", "constant_control_bound",
                "premium"],
               [[eps, baseline, limit_val, const_bound, premium]])
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "price": run_price,
    "dual": run_duality_check,
    "converge": run_convergence,
    "hjb": run_hjb,
    "verify": run_verify,
    "premium": run_premium_probe,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frictionlab",
        description="Super-replication pricing under convex trading friction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_env_overrides(cfg)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg.threads = args.threads
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be a u64")
            cfg.seed = args.seed
        os.makedirs(cfg.out_dir, exist_ok=True)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineRefusal as exc:
        print(f"engine refusal: {exc}", file=sys.stderr)
        return EXIT_REFUSAL


if __name__ == "__main__":
    sys.exit(main())
