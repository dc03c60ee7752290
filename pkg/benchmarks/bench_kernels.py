"""Timings of the compiled kernels against their numpy fallbacks.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import math
import timeit

import numpy as np

from ldforge import _kernels_py, kernels
from ldforge.geometry import catenoid_mesh


def cases():
    rng = np.random.default_rng(0)
    d, t = rng.uniform(0, 0.5, 20000), rng.uniform(-3, 3, 20000)
    mu0 = 2 * math.pi / 0.1
    n = np.arange(1, 60)
    beta = np.sqrt((n * mu0) ** 2 - 4.0)
    coef = -mu0 / (beta * -np.expm1(-2 * beta * 0.4))
    V = 2 / np.cosh(np.linspace(0, 6, 200001)) ** 2
    mesh = catenoid_mesh(1.0, 2.0, ds=0.02)
    return {
        "torus_mode_sum": lambda impl: impl.torus_mode_sum(d, t, mu0, beta, coef, 0.4),
        "rk4_linear": lambda impl: impl.rk4_linear(V, 6.0 / 100000, 1.0, 0.0),
        "cotan_laplacian": lambda impl: impl.cotan_laplacian(mesh.vertices, mesh.triangles),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"compiled extension available: {kernels.COMPILED}")
    print(f"{'kernel':<18}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}")
    for name, fn in cases().items():
        py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        if kernels.COMPILED:
            cy = min(timeit.repeat(lambda: fn(kernels), number=1, repeat=args.repeat))
            print(f"{name:<18}{py:>12.4f}{cy:>14.4f}{py / cy:>10.1f}")
        else:
            print(f"{name:<18}{py:>12.4f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
