"""Compiled inner loops (numba) for the torus sweeps and the banded physical operator."""

import numba
import numpy as np


@numba.njit(cache=True)
def _apply_L(W, k, phi, out):
    N = phi.shape[0]
    for i in range(N):
        acc = 0.0
        pi_ = phi[i]
        for j in range(N):
            acc += W[k, i, j] * (phi[j] - pi_)
        out[i] = acc


@numba.njit(cache=True)
def _matvec(Z, k, phi, out):
    N = phi.shape[0]
    for i in range(N):
        acc = 0.0
        for j in range(N):
            acc += Z[k, i, j] * phi[j]
        out[i] = acc


@numba.njit(cache=True)
def density_sweep(W, D, states, taus, p_end, dxi, out):
    """Backward explicit-Euler sweep ``p^n = p^{n+1} + tau_n L*_{k_n} p^{n+1}``.

    ``out`` has shape ``(n + 1, N)``; ``out[n] = p_end``.  Each new value is
    renormalised to unit mass.  Returns the index of the first step that lost
    positivity, or -1.
    """
    n = states.shape[0]
    N = p_end.shape[0]
    out[n, :] = p_end
    bad = -1
    for m in range(n - 1, -1, -1):
        k = states[m]
        tau = taus[m]
        mass = 0.0
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += W[k, j, i] * out[m + 1, j]
            v = out[m + 1, i] + tau * (acc - D[k, i] * out[m + 1, i])
            out[m, i] = v
            mass += v
            if v <= 0.0 and bad < 0:
                bad = m
        mass *= dxi
        for i in range(N):
            out[m, i] /= mass
    return bad


@numba.njit(cache=True)
def corrector_sweep(W, states, taus, rhs, weights, chi0, dxi, normalize, out, drift):
    """Generic explicit-Euler corrector ``chi^{n+1} = chi^n + tau (L chi^n + rhs^n)``.

    ``weights[n + 1]`` defines the normalisation applied to ``chi^{n+1}``;
    ``drift[n]`` records its weighted mean before renormalisation.
    """
    n = states.shape[0]
    N = chi0.shape[0]
    Lchi = np.empty(N)
    out[0, :] = chi0
    for m in range(n):
        k = states[m]
        tau = taus[m]
        _apply_L(W, k, out[m], Lchi)
        mean = 0.0
        for i in range(N):
            v = out[m, i] + tau * (Lchi[i] + rhs[m, i])
            out[m + 1, i] = v
            mean += v * weights[m + 1, i]
        mean *= dxi
        drift[m] = mean
        if normalize:
            for i in range(N):
                out[m + 1, i] -= mean


@numba.njit(cache=True)
def cell_sweep(W, Z1, Z2, rZ1, rZ2, rZ3, states, taus, P, use_beta, chi1, chi2, dxi,
               save_index, chi1_out, chi2_out, H_out,
               theta, beta, Hp, drift1, drift2):
    """Fused production sweep for chi1, chi2, Theta(s), beta(s) and <H>_p(s).

    Step ``n`` uses weights ``P[n + 1]`` (the density at the end of the step),
    which makes the discrete solvability conditions exact.  ``chi1`` and
    ``chi2`` are updated in place and hold the final state on return.
    ``save_index[m] >= 0`` stores ``chi1^m``, ``chi2^m`` (and ``H^m`` when
    ``m < n``) into row ``save_index[m]`` of the output buffers.
    """
    n = states.shape[0]
    N = chi1.shape[0]
    L1 = np.empty(N)
    L2 = np.empty(N)
    A1 = np.empty(N)
    A2 = np.empty(N)
    B1 = np.empty(N)
    new1 = np.empty(N)
    new2 = np.empty(N)
    h = np.empty(N)
    for m in range(n):
        k = states[m]
        tau = taus[m]
        b = 0.0
        if use_beta:
            for i in range(N):
                b += rZ1[k, i] * P[m + 1, i]
            b *= dxi
        beta[m] = b
        _apply_L(W, k, chi1, L1)
        _apply_L(W, k, chi2, L2)
        _matvec(Z1, k, chi1, A1)
        _matvec(Z2, k, chi1, A2)
        _matvec(Z1, k, chi2, B1)
        for i in range(N):
            new1[i] = chi1[i] + tau * (L1[i] - rZ1[k, i] + b)
        th = 0.0
        hp = 0.0
        for i in range(N):
            h[i] = 0.5 * rZ2[k, i] - A1[i] + b * new1[i]
            th += h[i] * P[m + 1, i]
            Hi = -rZ3[k, i] / 6.0 + 0.5 * A2[i] - B1[i]
            hp += Hi * P[m + 1, i]
            if save_index[m] >= 0:
                H_out[save_index[m], i] = Hi
        th *= dxi
        theta[m] = th
        Hp[m] = hp * dxi
        if save_index[m] >= 0:
            for i in range(N):
                chi1_out[save_index[m], i] = chi1[i]
                chi2_out[save_index[m], i] = chi2[i]
        c1 = 0.0
        c2 = 0.0
        for i in range(N):
            new2[i] = chi2[i] + tau * (L2[i] + h[i] - th)
            c1 += new1[i] * P[m + 1, i]
            c2 += new2[i] * P[m + 1, i]
        c1 *= dxi
        c2 *= dxi
        drift1[m] = c1
        drift2[m] = c2
        for i in range(N):
            chi1[i] = new1[i] - c1
            chi2[i] = new2[i] - c2
    if save_index[n] >= 0:
        for i in range(N):
            chi1_out[save_index[n], i] = chi1[i]
            chi2_out[save_index[n], i] = chi2[i]


@numba.njit(cache=True)
def homogeneous_sweep(W, states, taus, delta, every, norms):
    """Evolve ``delta' = L delta`` and record the oscillation norm every ``every`` steps."""
    n = states.shape[0]
    N = delta.shape[0]
    L = np.empty(N)
    rec = 0
    for m in range(n):
        if m % every == 0:
            mean = 0.0
            for i in range(N):
                mean += delta[i]
            mean /= N
            s = 0.0
            for i in range(N):
                s += (delta[i] - mean) ** 2
            norms[rec] = np.sqrt(s / N)
            rec += 1
        _apply_L(W, states[m], delta, L)
        for i in range(N):
            delta[i] += taus[m] * L[i]
    return rec


@numba.njit(cache=True)
def banded_apply(coef, offsets, u, out):
    """``out_i = sum_q coef[i mod N, q] (u_{i - o_q} - u_i)`` on a periodic array."""
    n = u.shape[0]
    N = coef.shape[0]
    nq = offsets.shape[0]
    for i in range(n):
        r = i % N
        ui = u[i]
        acc = 0.0
        for q in range(nq):
            j = i - offsets[q]
            if j < 0:
                j += n
            elif j >= n:
                j -= n
            acc += coef[r, q] * (u[j] - ui)
        out[i] = acc


@numba.njit(cache=True)
def banded_step(coef, offsets, u, tau, out):
    """Explicit Euler step ``out = u + tau * L u`` with the banded operator."""
    banded_apply(coef, offsets, u, out)
    for i in range(u.shape[0]):
        out[i] = u[i] + tau * out[i]
