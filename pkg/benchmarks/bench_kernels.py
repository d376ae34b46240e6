"""Compare the compiled kernels with their NumPy twins.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Prints one
line per kernel with the best wall time of each backend, the speed-up and
the largest absolute disagreement between the two results.
"""
import argparse
import timeit

import numpy as np

from birkhoff_girsanov import _kernels_py as pure

try:
    from birkhoff_girsanov import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    n, d, groups = 200_000, 4, 64 * 32
    labels = rng.integers(groups, size=n)
    scale = rng.random(n)
    values = rng.normal(size=(n, d))
    members = np.arange(400, dtype=np.int64)
    pts = rng.normal(size=(400, 8))
    paths = rng.normal(size=(10_000, 257)).cumsum(axis=1)
    integrand = rng.normal(size=(257, 2))
    steps = np.full(256, 1 / 256)
    return {
        "group_moments": (labels, scale, values, groups),
        "cell_diameter": (pts, members, pure.NORM_EUCLID),
        "farthest_pair": (pts, members, pure.NORM_MEANABS),
        "cumulative_trapezoid": (paths, integrand, steps),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(x, dtype=float)) for x in out])
    return np.ravel(np.asarray(out, dtype=float))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the NumPy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'python s':>12}{'compiled s':>12}{'speed-up':>10}{'max diff':>12}")
    for name, call_args in cases(rng).items():
        t_py = min(timeit.repeat(lambda: getattr(pure, name)(*call_args), number=1,
                                 repeat=args.repeat))
        if compiled is None:
            print(f"{name:<22}{t_py:>12.4f}")
            continue
        fn = getattr(compiled, name)
        t_c = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        diff = float(np.abs(_flat(fn(*call_args)) - _flat(getattr(pure, name)(*call_args))).max())
        print(f"{name:<22}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
