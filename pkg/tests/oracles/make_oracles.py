"""Regenerate the frozen oracle constants used by the test-suite.

Each value is produced by a method that does not share code paths with the
library solvers (closed forms, scipy quadrature, dense null spaces and
least-squares solves).  Run with ``python3 tests/oracles/make_oracles.py``
and paste the output into ``tests/oracle_values.py``.
"""

import numpy as np
import scipy.integrate
import scipy.linalg

from nlhomog.environment import DEFAULT_Q, frozen_nonsymmetric_environment
from nlhomog.torus import assemble_generator


def exp_kernel_first_moment():
    f = lambda z: z * np.exp(-z) / (1 - np.exp(-5))
    return scipy.integrate.quad(f, 0, 5, epsabs=1e-15, epsrel=1e-14)[0]


def mixing_bound(Q):
    Q = np.asarray(Q, float)
    w, vl, vr = scipy.linalg.eig(Q, left=True)
    i0 = np.argmin(np.abs(w))
    pi = np.real(vl[:, i0])
    pi = pi / pi.sum()
    order = np.argsort(np.abs(w))
    gap = np.min(-np.real(w[order][1:]))
    V = vr[:, order]
    C = np.linalg.svd(np.sqrt(pi)[:, None] * V, compute_uv=False)
    return (C.max() / C.min()) / gap


def frozen_density_and_corrector():
    env = frozen_nonsymmetric_environment(16)
    gen = assemble_generator(env)
    N = gen.n
    W = np.array(gen.W[0])
    L = W - np.diag(W.sum(axis=1))
    Lstar = L.T
    ns = scipy.linalg.null_space(Lstar)
    p = ns[:, 0] / (ns[:, 0].sum() / N)
    Z1 = np.array(gen.Z1[0])
    g = -Z1.sum(axis=1)
    beta = np.sum(-g * p) / N
    rhs = g + beta
    chi = scipy.linalg.lstsq(L, -rhs)[0]
    chi -= np.sum(chi * p) / N
    return p, chi, beta


def two_state_theta(levels, Q):
    Q = np.asarray(Q, float)
    pi = scipy.linalg.null_space(Q.T)[:, 0]
    pi = pi / pi.sum()
    return float(pi @ np.asarray(levels)) / 6.0


def scalar_green_kubo(levels, Q):
    Q = np.asarray(Q, float)
    pi = scipy.linalg.null_space(Q.T)[:, 0]
    pi = pi / pi.sum()
    f = np.asarray(levels) / 6.0
    ft = f - pi @ f
    # integrate the autocovariance with the matrix exponential
    cov = lambda s: float(np.sum(pi * ft * (scipy.linalg.expm(Q * s) @ ft)))
    val = scipy.integrate.quad(cov, 0, np.inf, epsabs=1e-16, epsrel=1e-12, limit=200)[0]
    return 2 * val


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    print("EXP_KERNEL_M1 =", repr(exp_kernel_first_moment()))
    print("DEFAULT_MIXING_BOUND =", repr(float(mixing_bound(DEFAULT_Q))))
    p, chi, beta = frozen_density_and_corrector()
    print("FROZEN_P =", repr(p.tolist()))
    print("FROZEN_CHI1 =", repr(chi.tolist()))
    print("FROZEN_BETA =", repr(float(beta)))
    print("TWO_STATE_THETA =", repr(two_state_theta([0.6, 1.4], [[-1, 1], [3, -3]])))
    print("SCALAR_TOY_C =", repr(scalar_green_kubo([0.6, 1.4], [[-1, 1], [1, -1]])))
    print("TWO_STATE_C =", repr(scalar_green_kubo([0.6, 1.4], [[-1, 1], [3, -3]])))
