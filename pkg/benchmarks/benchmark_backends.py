"""Compare the compiled lattice kernel against the numpy fallback.

Runs the same backward DP (call under a truncated quadratic cost) through
both backends and reports wall time and the value difference.

Usage: python benchmarks/benchmark_backends.py [n ...]
"""
import sys
import time

from frictionlab import backend, friction, payoffs
from frictionlab.market import MarketParams
from frictionlab.primal import GammaGrid, superrep_lattice


def run(n: int, use_compiled: bool):
    backend._use_compiled = use_compiled and backend._kernel is not None
    params = MarketParams(n=n, sigma=0.2, s0=100.0)
    penalty = friction.truncated_quadratic(1.0, 0.25)
    claim = payoffs.call(100.0)
    grid = GammaGrid(-2.0, 2.0, 241)
    t0 = time.perf_counter()
    result = superrep_lattice(params, penalty, claim, grid)
    return result.value, time.perf_counter() - t0


def main():
    sizes = [int(a) for a in sys.argv[1:]] or [32, 64, 128, 256]
    if backend._kernel is None:
        print("compiled kernel unavailable; benchmarking fallback only")
    print(f"{'n':>6} {'compiled_s':>11} {'fallback_s':>11} "
          f"{'speedup':>8} {'|dV|':>10}")
    for n in sizes:
        vc, tc = run(n, True)
        vf, tf = run(n, False)
        speedup = tf / tc if tc > 0 else float("nan")
        print(f"{n:>6} {tc:>11.3f} {tf:>11.3f} {speedup:>8.1f} "
              f"{abs(vc - vf):>10.2e}")


if __name__ == "__main__":
    main()
