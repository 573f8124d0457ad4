"""Effective coefficients of the shipped environments.

Runs the ergodic-average estimator on every shipped environment and prints
the effective diffusivity, the drift tensor, the fluctuation covariance and
the burn-in that the two-initialisation pilot selected.

    python3 demos/effective_coefficients.py [s_prod]
"""

import sys

from nlhomog import estimate_effective, shipped_environments


def main(s_prod=20000.0):
    print(f"{'environment':22s} {'mode':13s} {'Theta':>10s} {'se':>9s} {'beta':>10s} "
          f"{'H':>10s} {'C':>10s} {'burn-in':>8s}")
    for name, env in shipped_environments().items():
        eff = estimate_effective(env, s_prod=s_prod, seed=0)
        print(f"{name:22s} {eff.mode:13s} {eff.theta:10.6f} {eff.theta_se:9.2e} "
              f"{eff.beta:10.2e} {eff.H:10.2e} {eff.C_scalar:10.3e} {eff.s_burn:8.1f}")
    # the constant environment is exact: Theta = M2 / 2 = 1/6 for the uniform kernel


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 20000.0)
