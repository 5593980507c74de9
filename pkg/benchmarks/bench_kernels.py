"""Compare the jitted and pure-numpy cosine-distance kernels.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from relsets import kernels


def bench(fn, *args, repeats=20):
    fn(*args)  # warm up (and trigger jit compilation)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"{'pool':>10} {'dim':>5} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>8}")
    for pool, dim in ((1_000, 64), (10_000, 64), (100_000, 64), (10_000, 512)):
        ref = rng.standard_normal(dim)
        mat = rng.standard_normal((pool, dim))
        t_np = bench(kernels._cosine_distances_numpy, ref, mat)
        if kernels.NUMBA_DISABLED:
            print(f"{pool:>10} {dim:>5} {t_np * 1e3:>12.3f} {'disabled':>12} {'-':>8}")
            continue
        t_nb = bench(kernels._cosine_distances_numba, ref, mat)
        print(
            f"{pool:>10} {dim:>5} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f}"
            f" {t_np / t_nb:>7.2f}x"
        )

    print()
    print(f"{'matrix':>10} {'dim':>5} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>8}")
    for pool, dim in ((500, 64), (2_000, 64), (2_000, 256)):
        mat = rng.standard_normal((pool, dim))
        t_np = bench(kernels._pairwise_cosine_distances_numpy, mat, repeats=5)
        if kernels.NUMBA_DISABLED:
            print(f"{pool:>10} {dim:>5} {t_np * 1e3:>12.3f} {'disabled':>12} {'-':>8}")
            continue
        t_nb = bench(kernels._pairwise_cosine_distances_numba, mat, repeats=5)
        print(
            f"{pool:>10} {dim:>5} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f}"
            f" {t_np / t_nb:>7.2f}x"
        )


if __name__ == "__main__":
    main()
