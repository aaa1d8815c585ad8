"""Time EXP3 self-play with the compiled and the pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--horizon N] [--repeat R]

Both backends consume the same random draws, so the script also checks
that their averaged strategies agree bit for bit.
"""

import argparse
import time

import numpy as np

from gridmtd import kernels
from gridmtd.game import exp3_selfplay


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    impls = kernels.backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    print(f"{'shape':>8} {'backend':>8} {'seconds':>9} {'steps/s':>12}")
    for shape in [(2, 2), (6, 20), (20, 40)]:
        u = np.random.default_rng(0).random(shape)
        results = {}
        for name in impls:
            dt, res = best_time(lambda: exp3_selfplay(u, "explore", args.horizon, seed=1, backend=name),
                                args.repeat if name == "cython" else 1)
            results[name] = (dt, res)
            label = f"{shape[0]}x{shape[1]}"
            print(f"{label:>8} {name:>8} {dt:9.3f} {args.horizon / dt:12.0f}")
        if len(results) == 2:
            (tp, rp), (tc, rc) = results["python"], results["cython"]
            same = np.array_equal(rp.p_d, rc.p_d) and np.array_equal(rp.p_a, rc.p_a)
            print(f"{'':>8} speedup {tp / tc:6.1f}x  identical={same}")


if __name__ == "__main__":
    main()
