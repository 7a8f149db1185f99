"""Time the numba and numpy CES kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--rows N] [--repeat R]

Also reports the largest disagreement between the two backends. The first
numba call (JIT compile, or cache load) is timed separately.
"""

import argparse
import time

import numpy as np

from cesrisk import _kernels as K


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    logx = np.log(np.column_stack([rng.uniform(1, 50, args.rows), rng.uniform(1, 330, args.rows)]))
    c = np.array([0.78, 0.22])
    print(f"rows={args.rows} repeat={args.repeat} default backend={K.BACKEND}")

    for r in (-5.55, -0.3, 1e-9, 0.41):
        t_np = _best(lambda: K.ces_log_kernel_numpy(logx, r, c), args.repeat)
        line = f"r={r:+8.3g}  numpy {t_np * 1e3:8.2f} ms"
        if K.ces_log_kernel_numba is not None:
            t0 = time.perf_counter()
            K.ces_log_kernel_numba(logx[:2], r, c)
            first = time.perf_counter() - t0
            t_nb = _best(lambda: K.ces_log_kernel_numba(logx, r, c), args.repeat)
            a = K.ces_log_kernel_numpy(logx, r, c)
            b = K.ces_log_kernel_numba(logx, r, c)
            diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a[:3], b[:3]))
            line += f"  numba {t_nb * 1e3:8.2f} ms (first call {first * 1e3:.0f} ms)  speedup {t_np / t_nb:5.1f}x  max|diff| {diff:.2e}"
        else:
            line += "  numba unavailable"
        print(line)


if __name__ == "__main__":
    main()
