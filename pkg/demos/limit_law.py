"""Gaussian limit of the normalized difference.

Samples ``<U^eps(T), phi>`` over independent environment paths and sets the
sample moments next to the exact mean and variance of the limit equation.
The file ``limit_law.csv`` holds the raw projections for plotting.

    python3 demos/limit_law.py [replicates]
"""

import sys

import numpy as np

from nlhomog.effective import estimate_effective
from nlhomog.environment import default_symmetric_environment
from nlhomog.fullscale import (gaussian_test_functions, prepare_fullscale, run_replicate,
                               solve_homogenized)
from nlhomog.io import write_csv
from nlhomog.spde import LimitProblem, projection_moments


def main(M=100, eps=0.1, T=0.5):
    env = default_symmetric_environment()
    eff = estimate_effective(env, s_prod=200000.0, seed=2)
    setup = prepare_fullscale(env, eff, T, seed=2)
    grid = setup.grid(eps)
    prob = LimitProblem.from_effective(eff, solve_homogenized(eff.theta, setup.initial, T, grid), T)
    phis = gaussian_test_functions(grid, setup.test_functions)
    res = [run_replicate(setup, eps, r) for r in range(M)]
    P = np.array([r.proj_U for r in res])
    for j, (spec, phi) in enumerate(zip(setup.test_functions, phis)):
        mean, var = projection_moments(prob, phi)
        print(f"phi centre {spec[0]:+.1f} width {spec[1]:.1f}: "
              f"sample mean {P[:, j].mean():+.3e} (limit {mean:+.3e}), "
              f"variance ratio {P[:, j].var(ddof=1) / var:.3f}")
    rows = [{"replicate": r.replicate, **{f"proj_{j}": float(v) for j, v in enumerate(r.proj_U)}}
            for r in res]
    write_csv("limit_law.csv", rows, "demo")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100)
