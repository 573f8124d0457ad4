"""Effective coefficients: diffusivity, drift tensor, fluctuation covariance.

Expectations are single-path ergodic averages over a production window.  The
window is processed in chunks; the correctors carry over from chunk to chunk
and, in non-symmetric mode, each chunk gets its own backward density sweep
started beyond its end.  Rank-2 quantities are vectorised row-major, which in
d = 1 is the identity map.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .corrector import (CellSolution, CorrectorField, DecayEstimate, InvariantDensity,
                        StepSchedule, build_schedule, estimate_decay_rate,
                        solve_cell_problems, solve_invariant_density)
from .environment import EnvironmentModel, sample_path
from .errors import (ConfigurationError, DependencyError, EstimationError, MixingError,
                     ValidationError)
from .torus import GeneratorMatrix, assemble_generator

MODES = ("symmetric", "nonsymmetric")


def resolve_mode(env: EnvironmentModel, mode: str = "auto") -> str:
    if mode == "auto":
        return "symmetric" if env.symmetric else "nonsymmetric"
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if mode == "symmetric" and not env.symmetric:
        raise ConfigurationError("symmetric mode requested for a non-symmetric environment")
    return mode


def fast_step(env: EnvironmentModel, nominal: float = 0.25) -> float:
    """Largest ``nominal / 2^j`` inside the explicit-Euler bound ``0.9 / (2 Lambda+)``."""
    ds = nominal
    while ds > env.stable_step() * (1 + 1e-12):
        ds /= 2
    return ds


# ---------------------------------------------------------------------------
# Local flux and Theta statistics
# ---------------------------------------------------------------------------


def local_flux_h(gen: GeneratorMatrix, schedule: StepSchedule, chi1: CorrectorField,
                 p: Optional[InvariantDensity] = None, beta=None, mode: str = "symmetric"):
    """Local flux ``h^n`` and its weighted torus average ``Theta^n``.

    ``h^n = 1/2 rowsum Z2 - Z1 chi1^n`` plus ``beta^n chi1^{n+1}`` in
    non-symmetric mode; ``Theta^n = sum_i h^n_i p_i^{n+1} dxi``.
    """
    if chi1.schedule is not schedule and chi1.values.shape[0] != schedule.n + 1:
        raise ConfigurationError("chi1 window does not match the schedule")
    k = schedule.states
    c = chi1.values
    h = 0.5 * gen.rZ2[k] - np.einsum("nij,nj->ni", gen.Z1[k], c[:-1])
    if mode == "nonsymmetric":
        if p is None or beta is None:
            raise DependencyError("non-symmetric flux needs p and beta")
        h = h + np.asarray(beta)[:, None] * c[1:]
        q = p.values[1:]
    else:
        q = np.ones_like(h)
    theta = np.einsum("ni,ni->n", h, q) * gen.dxi
    return h, theta


def cell_averages(values, schedule: StepSchedule, g0: int = 0, g1: Optional[int] = None):
    """Average a per-step series over nominal cells ``[s0 + g ds, s0 + (g+1) ds)``."""
    g1 = schedule.n_cells if g1 is None else g1
    tot = np.bincount(schedule.cells, weights=schedule.taus * np.asarray(values),
                      minlength=schedule.n_cells)
    return tot[g0:g1] / schedule.ds


def batch_means(x, n_batches: int = 16):
    """Mean and batch-means standard error of a stationary series."""
    x = np.asarray(x, dtype=float)
    nb = len(x) // n_batches
    if nb < 1:
        raise EstimationError("series shorter than the number of batches")
    b = x[:nb * n_batches].reshape(n_batches, nb).mean(axis=1)
    return float(x.mean()), float(b.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class ThetaStatistics:
    theta_eff: float
    se: float
    theta_tilde: np.ndarray = field(repr=False)
    window: float = 0.0
    n_batches: int = 16


def theta_statistics(theta_cells, ds: float, n_batches: int = 16,
                     mixing_time: Optional[float] = None, strict: bool = False) -> ThetaStatistics:
    """``Theta_eff`` as the window average, ``Theta~ = Theta - Theta_eff`` and batch-means error.

    ``theta_cells`` are averages over consecutive cells of length ``ds``.
    """
    x = np.asarray(theta_cells, dtype=float)
    window = len(x) * ds
    if mixing_time is not None and np.isfinite(mixing_time) and window < 50 * mixing_time:
        msg = f"window {window:.4g} shorter than 50 mixing times ({50 * mixing_time:.4g})"
        if strict:
            raise EstimationError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    mean, se = batch_means(x, n_batches)
    return ThetaStatistics(mean, se, x - mean, window, n_batches)


def drift_tensor_H(gen: GeneratorMatrix, schedule: StepSchedule, chi1: CorrectorField,
                   chi2: Optional[CorrectorField], p: Optional[InvariantDensity] = None,
                   beta=None, theta_eff: float = 0.0, mode: str = "symmetric"):
    """Local drift field ``H^n``, its weighted average and ``H_eff``.

    ``H^n = -1/6 rowsum Z3 + 1/2 Z2 chi1^n - Z1 chi2^n``.  The effective value
    is the time average of ``sum_i (H^n - chi1^{n+1} Theta_eff + beta^n chi2^{n+1}) p^{n+1} dxi``
    (the last two terms vanish in the p-weighted gauge and on symmetric input).
    """
    if chi2 is None:
        raise DependencyError("drift tensor needs the second corrector")
    k = schedule.states
    c1, c2 = chi1.values, chi2.values
    H = (-gen.rZ3[k] / 6.0 + 0.5 * np.einsum("nij,nj->ni", gen.Z2[k], c1[:-1])
         - np.einsum("nij,nj->ni", gen.Z1[k], c2[:-1]))
    q = np.ones_like(H) if p is None else p.values[1:]
    b = np.zeros(schedule.n) if beta is None else np.asarray(beta)
    full = H - c1[1:] * theta_eff
    if mode == "nonsymmetric":
        full = full + b[:, None] * c2[1:]
    Hbar = np.einsum("ni,ni->n", full, q) * gen.dxi
    H_eff = float(np.sum(schedule.taus * Hbar) / np.sum(schedule.taus))
    return H, Hbar, H_eff


# ---------------------------------------------------------------------------
# Fluctuation covariance
# ---------------------------------------------------------------------------


@dataclass
class CovarianceEstimate:
    C: np.ndarray
    se: np.ndarray
    r_max: float
    n_lags: int
    tail_bound: float
    envelope_rate: float
    acov: np.ndarray = field(repr=False)
    noise: np.ndarray = field(repr=False)


def _autocov(x, n_lags):
    n = x.shape[0]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    F = np.fft.rfft(x, nfft, axis=0)
    m = x.shape[1]
    out = np.empty((n_lags + 1, m, m))
    for a in range(m):
        for b in range(m):
            r = np.fft.irfft(F[:, a] * np.conj(F[:, b]), nfft)[:n_lags + 1]
            # r[k] = sum_t x_a[t + k] x_b[t]
            out[:, a, b] = r / n
    return out


def fluctuation_covariance(theta_tilde, ds: float, gap: Optional[float] = None,
                           r_max: Optional[float] = None) -> CovarianceEstimate:
    """Green-Kubo covariance of cell-averaged fluctuations.

    ``C = ds (G_0 + sum_{k=1}^{K} (G_k + G_k^T))`` with empirical lag
    covariances ``G_k``; for cell averages this lag sum is the exact
    long-run variance of the time integral.  ``K ds = r_max`` defaults to
    ``max(10 / gap, first lag where |G_k|`` falls below twice its Bartlett
    noise level``)``.  An exponential envelope fitted to the significant
    lags bounds the omitted tail.

    Raises
    ------
    MixingError
        If the fitted envelope does not decay.
    """
    x = np.asarray(theta_tilde, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = x - x.mean(axis=0)
    n, m = x.shape
    if np.max(np.abs(x)) <= 1e-14 * max(1.0, float(np.max(np.abs(theta_tilde)))):
        z = np.zeros((m, m))
        return CovarianceEstimate(z, z.copy(), 0.0, 0, 0.0, np.inf, np.zeros((1, m, m)), np.zeros(1))
    max_lags = max(2, min(n // 4, 100000))
    G = _autocov(x, max_lags)
    g = np.array([np.trace(Gk) for Gk in G])
    noise = np.sqrt((g[0] ** 2 + 2 * np.cumsum(np.concatenate([[0.0, 0.0], g[1:-1] ** 2]))) / n)
    below = np.nonzero(np.abs(g[1:]) < 2 * noise[1:])[0]
    k_noise = int(below[0]) + 1 if below.size else max_lags
    if r_max is None:
        k_gap = int(np.ceil(10.0 / gap / ds)) if gap is not None and np.isfinite(gap) else 0
        K = min(max(k_gap, k_noise), max_lags)
    else:
        K = min(int(np.ceil(r_max / ds)), max_lags)
    sig = np.arange(1, K + 1)
    sig = sig[np.abs(g[sig]) > 2 * noise[sig]]
    rate = np.inf
    tail = 0.0
    if sig.size >= 3:
        slope = np.polyfit(sig * ds, np.log(np.abs(g[sig])), 1)[0]
        rate = -float(slope)
        if not rate > 0:
            raise MixingError("autocovariance envelope does not decay")
        tail = float(2 * abs(g[K]) * np.exp(-rate * ds) / (1 - np.exp(-rate * ds)) * ds)
    C = ds * (G[0] + np.sum(G[1:K + 1] + np.transpose(G[1:K + 1], (0, 2, 1)), axis=0))
    C = 0.5 * (C + C.T)
    se = np.abs(C) * np.sqrt(2.0 * (2 * K + 1) / n)
    return CovarianceEstimate(C, se, K * ds, K, tail, rate, G[:K + 1], noise[:K + 1])


def psd_sqrt(C, tol_rel: float = 1e-8):
    """Symmetric PSD square root with clipping of small negative eigenvalues.

    Returns ``(A, clipped_mass)``.

    Raises
    ------
    ValidationError
        If ``C`` is not symmetric to 1e-8.
    EstimationError
        If an eigenvalue is below ``-tol_rel * trace(C)``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    scale = max(1.0, np.abs(C).max())
    if np.max(np.abs(C - C.T)) > 1e-8 * scale:
        raise ValidationError("covariance is not symmetric")
    C = 0.5 * (C + C.T)
    lam, V = np.linalg.eigh(C)
    tol_neg = tol_rel * max(np.trace(C), 0.0)
    if lam.min() < -tol_neg:
        raise EstimationError(
            f"covariance has eigenvalue {lam.min():.3g} below -{tol_neg:.3g}")
    clipped = float(np.sum(-lam[lam < 0]))
    lam = np.clip(lam, 0.0, None)
    A = (V * np.sqrt(lam)) @ V.T
    return 0.5 * (A + A.T), clipped


# ---------------------------------------------------------------------------
# Full estimation
# ---------------------------------------------------------------------------


@dataclass
class EffectiveCoefficients:
    """Effective and limit coefficients with error bars (d = 1 shapes)."""

    mode: str
    theta_eff: np.ndarray
    theta_se: float
    beta_bar: np.ndarray
    beta_std: float
    beta_se: float
    h6: bool
    H_eff: np.ndarray
    H_se: float
    C: np.ndarray
    C_se: np.ndarray
    A_eff: np.ndarray
    clipped_mass: float
    r_max: float
    tail_bound: float
    envelope_rate: float
    gamma0: float
    gamma0_r2: float
    s_burn: float
    s_prod: float
    ds: float
    seed: int
    environment: str
    gauge: str = "p-weighted mean zero"
    vectorization: str = "row-major"
    max_chi1_drift: float = 0.0
    series: Optional[dict] = field(default=None, repr=False)

    @property
    def theta(self) -> float:
        return float(self.theta_eff[0, 0])

    @property
    def beta(self) -> float:
        return float(self.beta_bar[0])

    @property
    def H(self) -> float:
        return float(self.H_eff[0, 0, 0])

    @property
    def A(self) -> float:
        return float(self.A_eff[0, 0])

    @property
    def C_scalar(self) -> float:
        return float(self.C[0, 0])

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if k == "series":
                continue
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveCoefficients":
        d = dict(d)
        for k in ("theta_eff", "beta_bar", "H_eff", "C", "C_se", "A_eff"):
            d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)

    @classmethod
    def from_values(cls, theta: float, A: float = 0.0, H: float = 0.0, beta: float = 0.0,
                    mode: str = "symmetric") -> "EffectiveCoefficients":
        """Hand-specified coefficients (no estimation metadata)."""
        return cls(mode, np.array([[theta]]), 0.0, np.array([beta]), 0.0, 0.0, True,
                   np.array([[[H]]]), 0.0, np.array([[A * A]]), np.zeros((1, 1)),
                   np.array([[abs(A)]]), 0.0, 0.0, 0.0, np.inf, np.inf, 1.0, 0.0, 0.0,
                   0.0, 0, "manual")


@dataclass
class ProductionRun:
    """Per-step production outputs concatenated over chunks."""

    theta: np.ndarray
    beta: np.ndarray
    Hp: np.ndarray
    drift1: np.ndarray
    taus: np.ndarray
    theta_cells: np.ndarray
    H_cells: np.ndarray
    beta_cells: np.ndarray


def production_run(gen: GeneratorMatrix, schedule: StepSchedule, g_burn: int, g_prod: int,
                   mode: str, g_pburn: int = 0, chunk_cells: int = 20000) -> ProductionRun:
    """Run the fused corrector sweep over ``[0, g_burn + g_prod]`` nominal cells."""
    nonsym = mode == "nonsymmetric"
    chi1 = chi2 = None
    parts = {k: [] for k in ("theta", "beta", "Hp", "drift1", "taus")}
    cells = {k: [] for k in ("theta", "H", "beta")}
    bounds = [0, g_burn] + list(range(g_burn + chunk_cells, g_burn + g_prod, chunk_cells)) \
        + [g_burn + g_prod]
    bounds = sorted(set(bounds))
    for g0, g1 in zip(bounds[:-1], bounds[1:]):
        sub = schedule.slice(g0, g1)
        p = None
        if nonsym:
            ext = schedule.slice(g0, min(g1 + g_pburn, schedule.n_cells))
            pd = solve_invariant_density(gen, ext)
            p = InvariantDensity(sub, pd.values[:sub.n + 1], sub.end)
        sol = solve_cell_problems(gen, sub, p=p, use_beta=nonsym, chi1_0=chi1, chi2_0=chi2)
        chi1, chi2 = sol.final_chi1, sol.final_chi2
        if g0 >= g_burn:
            parts["theta"].append(sol.theta)
            parts["beta"].append(sol.beta)
            parts["Hp"].append(sol.Hp)
            parts["drift1"].append(sol.drift1)
            parts["taus"].append(sub.taus)
            cells["theta"].append(cell_averages(sol.theta, sub))
            cells["H"].append(cell_averages(sol.Hp, sub))
            cells["beta"].append(cell_averages(sol.beta, sub))
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return ProductionRun(cat["theta"], cat["beta"], cat["Hp"], cat["drift1"], cat["taus"],
                         np.concatenate(cells["theta"]), np.concatenate(cells["H"]),
                         np.concatenate(cells["beta"]))


def estimate_effective(env: EnvironmentModel, mode: str = "auto", seed: int = 0,
                       stream: int = 0, s_prod: float = 2000.0, ds: Optional[float] = None,
                       n_batches: int = 16, chunk_cells: int = 20000,
                       decay: Optional[DecayEstimate] = None, gen: Optional[GeneratorMatrix] = None,
                       strict: bool = False, keep_series: bool = False,
                       h6_tol: float = 1e-8) -> EffectiveCoefficients:
    """Estimate all effective coefficients along one long driver path.

    The burn-in comes from a two-initialisation pilot (``20 / gamma0``); in
    non-symmetric mode the same length is used for the backward density
    burn-in past the end of every chunk.
    """
    mode = resolve_mode(env, mode)
    gen = assemble_generator(env) if gen is None else gen
    ds = fast_step(env) if ds is None else ds
    if decay is None:
        pilot = sample_path(env.driver, 400.0, seed, stream + 7919)
        decay = estimate_decay_rate(gen, pilot, ds, seed=seed)
    g_burn = int(round(decay.s_burn / ds))
    g_prod = int(np.ceil(s_prod / ds - 1e-9))
    g_pburn = g_burn if mode == "nonsymmetric" else 0
    horizon = (g_burn + g_prod + g_pburn) * ds
    path = sample_path(env.driver, horizon, seed, stream)
    schedule = build_schedule(path, 0.0, horizon, ds)
    run = production_run(gen, schedule, g_burn, g_prod, mode, g_pburn, chunk_cells)

    mix = max(env.driver.mixing_time, 1.0 / decay.gamma0)
    ts = theta_statistics(run.theta_cells, ds, n_batches, mix, strict)
    H_eff, H_se = batch_means(run.H_cells, n_batches)
    beta_bar, beta_se = batch_means(run.beta_cells, n_batches)
    w = run.taus
    beta_std = float(np.sqrt(np.sum(w * (run.beta - beta_bar) ** 2) / np.sum(w)))
    cov = fluctuation_covariance(ts.theta_tilde, ds, env.driver.gap)
    A, clipped = psd_sqrt(cov.C)
    series = None
    if keep_series:
        series = {"theta_cells": run.theta_cells, "H_cells": run.H_cells,
                  "beta_cells": run.beta_cells, "acov": cov.acov}
    return EffectiveCoefficients(
        mode=mode, theta_eff=np.array([[ts.theta_eff]]), theta_se=ts.se,
        beta_bar=np.array([beta_bar if mode == "nonsymmetric" else 0.0]),
        beta_std=beta_std, beta_se=beta_se,
        h6=bool(mode == "symmetric" or beta_std <= h6_tol),
        H_eff=np.array([[[H_eff]]]), H_se=H_se, C=cov.C, C_se=cov.se, A_eff=A,
        clipped_mass=clipped, r_max=cov.r_max, tail_bound=cov.tail_bound,
        envelope_rate=cov.envelope_rate, gamma0=decay.gamma0, gamma0_r2=decay.r2,
        s_burn=decay.s_burn, s_prod=g_prod * ds, ds=ds, seed=int(seed),
        environment=env.name, max_chi1_drift=float(np.abs(run.drift1).max()),
        series=series)
