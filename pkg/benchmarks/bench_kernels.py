"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--grid T,P,X] [--repeat N]
"""
import argparse
import timeit

import numpy as np

from moistpe import kernels
from moistpe.geometry import build_grid
from moistpe.operators import _metric


def _cases(grid, rng):
    metric = _metric(grid)
    a = rng.standard_normal(grid.shape)
    b = rng.standard_normal(grid.shape)
    n = grid.n_xi
    lower = np.full(n, -0.4)
    upper = np.full(n, -0.4)
    lower[0] = upper[-1] = 0.0
    diag = np.full(n, 1.8)
    rhs = rng.standard_normal((grid.n_theta * grid.n_phi, n))
    return {
        "h_div": lambda impl: impl.h_div(a, b, *metric),
        "h_grad": lambda impl: impl.h_grad(a, *metric),
        "tridiag_solve": lambda impl: impl.tridiag_solve(lower, diag, upper, rhs),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--grid", default="32,64,16")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    dims = tuple(int(x) for x in args.grid.split(","))
    grid = build_grid(*dims)
    backends = {"numpy": kernels.python_kernels}
    if kernels.compiled_kernels is not None:
        backends["cython"] = kernels.compiled_kernels
    else:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"grid {dims[0]}x{dims[1]}x{dims[2]}, best of {args.repeat}")
    print(f"{'kernel':<15s}" + "".join(f"{name:>14s}" for name in backends) + "   speedup")
    for name, fn in _cases(grid, np.random.default_rng(0)).items():
        times = {}
        for label, impl in backends.items():
            timer = timeit.Timer(lambda: fn(impl))
            loops, _ = timer.autorange()
            times[label] = min(timer.repeat(args.repeat, loops)) / loops
        row = f"{name:<15s}" + "".join(f"{times[k] * 1e3:>11.3f} ms" for k in backends)
        if "cython" in times:
            row += f"   {times['numpy'] / times['cython']:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
