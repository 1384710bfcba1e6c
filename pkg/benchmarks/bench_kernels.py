"""Time the numba and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, size, backend) with the best wall time and
checks that both backends return identical arrays.
"""
import argparse
import time

import numpy as np

from ehopt import kernels
from ehopt.online import GainProcess, IIDRates, StochasticModel, default_grid, solve_dp_case2
from ehopt.model import Throughput


def best_of(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if kernels.NUMBA_AVAILABLE else [])
    rng = np.random.default_rng(0)

    # warm the JIT so compile time is not charged to the first size
    if kernels.NUMBA_AVAILABLE:
        kernels.maxplus_conv(np.zeros(4), np.zeros(4), backend="numba")
        kernels.best_serve_set(np.ones(3), np.ones(3), backend="numba")

    for K in (200, 1000, 4000):
        a = np.log2(1.0 + rng.random() * np.arange(K))
        c = np.sort(rng.random(K))[::-1]
        ref = None
        for b in backends:
            out, dt = best_of(lambda: kernels.maxplus_conv(a, c, K, backend=b), args.repeat)
            if ref is not None:
                assert np.array_equal(out[0], ref[0]) and np.array_equal(out[1], ref[1])
            ref = out
            print(f"maxplus_conv  K={K:<6d} {b:<6s} {dt * 1e3:9.2f} ms")

    for T in (12, 16, 20):
        need = rng.uniform(0.2, 2.0, T)
        cap = np.cumsum(rng.uniform(0.0, 1.0, T))
        ref = None
        for b in backends:
            out, dt = best_of(lambda: kernels.best_serve_set(need, cap, backend=b), args.repeat)
            assert ref is None or out == ref
            ref = out
            print(f"serve_set     T={T:<6d} {b:<6s} {dt * 1e3:9.2f} ms")

    model = StochasticModel(IIDRates([0.25, 0.5, 1.0], [0.3, 0.3, 0.4]),
                            GainProcess([0.3, 1.0, 2.5], [0.3, 0.4, 0.3]), 4, 3)
    grid = default_grid(model, 401)
    ref = None
    for b in backends:
        pol, dt = best_of(lambda: solve_dp_case2(model, Throughput(), grid, backend=b),
                          max(1, args.repeat // 2))
        assert ref is None or pol.expected_value == ref
        ref = pol.expected_value
        print(f"dp_case2      L={grid.levels:<6d} {b:<6s} {dt * 1e3:9.2f} ms")


if __name__ == "__main__":
    main()
