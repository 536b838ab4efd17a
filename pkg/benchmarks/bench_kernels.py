"""Compare the compiled and numpy contrast kernels.

Run with ``python benchmarks/bench_kernels.py``. Prints the median time per
call for each backend and the speed ratio at several batch sizes.
"""

import argparse
import timeit

import numpy as np

from unicon import _kernels_py

try:
    from unicon import _kernels
except ImportError:
    _kernels = None


def problem(n, seed=0):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(n, 2 * n)) * 5.0
    weights = (rng.random((n, 2 * n)) < 0.1).astype(float)
    mask = np.ones((n, 2 * n), dtype=bool)
    mask[np.arange(n), np.arange(n)] = False
    weights[~mask] = 0.0
    return logits, weights, mask


def bench(fn, args, repeat):
    times = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return float(np.median(times))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="16,64,256,1024")
    parser.add_argument("--repeat", type=int, default=30)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'rows':>6} {'python_ms':>10} {'cython_ms':>10} {'speedup':>8} {'max_diff':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        logits, weights, mask = problem(n)
        t_py = bench(_kernels_py.contrast_rows, (logits, weights, mask), args.repeat)
        if _kernels is None:
            print(f"{n:>6} {t_py * 1e3:>10.3f} {'-':>10} {'-':>8} {'-':>10}")
            continue
        t_cy = bench(_kernels.contrast_rows, (logits, weights, mask), args.repeat)
        a = _kernels_py.contrast_rows(logits, weights, mask)
        b = _kernels.contrast_rows(logits, weights, mask)
        diff = max(np.max(np.abs(x - y)) for x, y in zip(a, b))
        print(f"{n:>6} {t_py * 1e3:>10.3f} {t_cy * 1e3:>10.3f} {t_py / t_cy:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
