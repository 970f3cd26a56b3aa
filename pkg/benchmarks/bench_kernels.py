"""Compare the numba and NumPy paths of the segmentation kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the env flag does not matter here. The
first numba call is made before timing so compilation is excluded.
"""
import argparse
import timeit

import numpy as np

from depthflow import kernels
from depthflow.segmentation import _unit_states


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_dp(repeat):
    g = np.random.default_rng(0)
    for n, k in ((12, 2), (24, 4), (48, 6), (96, 8)):
        a = g.uniform(-1, 1, (n, n))
        p, diag = kernels.prefix_tables(0.5 * (a + a.T))
        ref = kernels.dp_table_numpy(p, diag, k, 1)
        fast = kernels.dp_table_jit(p, diag, k, 1, 0)
        assert np.array_equal(ref, fast)
        yield f"dp_table n={n} k={k}", _best(lambda: kernels.dp_table_numpy(p, diag, k, 1), repeat), \
            _best(lambda: kernels.dp_table_jit(p, diag, k, 1, 0), repeat)


def bench_gram(repeat):
    g = np.random.default_rng(1)
    for shape in ((16, 13, 8, 16), (64, 25, 16, 32), (128, 25, 32, 64)):
        x = _unit_states(g.standard_normal(shape))
        assert np.allclose(kernels.cosine_gram_numpy(x), kernels.cosine_gram_jit(x), atol=1e-12)
        yield f"cosine_gram {shape}", _best(lambda: kernels.cosine_gram_numpy(x), repeat), \
            _best(lambda: kernels.cosine_gram_jit(x), repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.dp_table_jit is None:
        raise SystemExit("numba is not available (or DEPTHFLOW_NO_NUMBA is set); nothing to compare")
    print(f"{'kernel':<34}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, slow, fast in [*bench_dp(args.repeat), *bench_gram(args.repeat)]:
        print(f"{name:<34}{slow * 1e3:>10.3f}ms{fast * 1e3:>10.3f}ms{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
