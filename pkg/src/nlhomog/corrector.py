"""Stationary correctors, invariant density and drift on the torus.

All fields are advanced by explicit Euler in fast time on a
:class:`StepSchedule`: a uniform grid of step ``ds`` refined at every jump
time of the driver, so that each step sees a single driver state.  The
backward density sweep and the forward corrector sweeps use the same
schedule; step ``n`` of a forward sweep is weighted by ``p^{n+1}``, which
keeps the discrete solvability conditions exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .environment import DriverPath, make_rng
from .errors import (ConfigurationError, DomainError, NonConvergenceError,
                     SolvabilityError, StepSizeError)
from .torus import GeneratorMatrix

RHS_KINDS = ("g", "g_plus_beta", "h_minus_theta", "H_minus_avg", "chi1_itself")


# ---------------------------------------------------------------------------
# Time schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepSchedule:
    """Explicit-Euler steps ``[starts[n], starts[n] + taus[n])`` with driver ``states[n]``.

    ``grid_steps[g]`` is the step index at which nominal grid point
    ``s0 + g * ds`` begins (``n`` for the final point).
    """

    starts: np.ndarray
    taus: np.ndarray
    states: np.ndarray
    cells: np.ndarray
    grid_steps: np.ndarray
    s0: float
    ds: float

    @property
    def n(self) -> int:
        return len(self.taus)

    @property
    def end(self) -> float:
        return self.s0 + self.ds * (len(self.grid_steps) - 1)

    @property
    def n_cells(self) -> int:
        return len(self.grid_steps) - 1

    def step_at(self, s: float) -> int:
        """Index of the step beginning at nominal grid time ``s``."""
        g = (s - self.s0) / self.ds
        gi = int(round(g))
        if abs(g - gi) > 1e-8 or not 0 <= gi < len(self.grid_steps):
            raise DomainError(f"time {s} is not a nominal grid point of the schedule")
        return int(self.grid_steps[gi])

    def times(self) -> np.ndarray:
        """Step boundaries ``s_0 .. s_n``."""
        return np.append(self.starts, self.end)

    def slice(self, g0: int, g1: int) -> "StepSchedule":
        """Sub-schedule between nominal grid points ``g0`` and ``g1``."""
        a, b = int(self.grid_steps[g0]), int(self.grid_steps[g1])
        return StepSchedule(self.starts[a:b], self.taus[a:b], self.states[a:b],
                            self.cells[a:b] - g0, self.grid_steps[g0:g1 + 1] - a,
                            self.s0 + g0 * self.ds, self.ds)


def build_schedule(path: DriverPath, s0: float, s1: float, ds: float) -> StepSchedule:
    """Uniform grid of step ``ds`` on ``[s0, s1]`` refined at the driver's jump times."""
    if not ds > 0:
        raise ConfigurationError("step must be positive")
    ncell = (s1 - s0) / ds
    nc = int(round(ncell))
    if nc < 1 or abs(ncell - nc) > 1e-8 * max(1.0, ncell):
        raise ConfigurationError(f"window [{s0}, {s1}] is not a multiple of ds = {ds}")
    if s0 < 0 or s1 > path.horizon * (1 + 1e-12):
        raise ConfigurationError("schedule extends beyond the driver path horizon")
    grid = s0 + ds * np.arange(nc + 1)
    jumps = path.jumps_between(s0, s1)
    if len(jumps):
        near = np.clip(np.round((jumps - s0) / ds).astype(np.int64), 0, nc)
        jumps = jumps[np.abs(jumps - grid[near]) > 1e-12]
    pts = np.union1d(grid, jumps)
    starts = pts[:-1]
    taus = np.diff(pts)
    states = np.asarray(path.state_at(np.minimum(starts, path.horizon)), dtype=np.int64)
    states = np.atleast_1d(states)
    cells = np.minimum(np.floor((starts - s0) / ds + 1e-9).astype(np.int64), nc - 1)
    grid_steps = np.searchsorted(pts, grid - 1e-12)
    return StepSchedule(starts, taus, states, cells, grid_steps.astype(np.int64), float(s0), float(ds))


def check_step(gen: GeneratorMatrix, schedule: StepSchedule, safety: float = 0.9):
    bound = safety / (2.0 * gen.env.lam_max)
    if schedule.ds > bound * (1 + 1e-12):
        raise ConfigurationError(
            f"step {schedule.ds} exceeds the explicit-Euler bound {bound:.6g}")


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CorrectorField:
    """Trajectory ``values[n] = chi(., s_n)`` on the schedule boundaries."""

    schedule: StepSchedule
    values: np.ndarray
    normalization: str
    s_burn: float
    drift: np.ndarray
    name: str = "chi"

    @property
    def ds(self) -> float:
        return self.schedule.ds

    def production(self) -> np.ndarray:
        return self.values[self.schedule.step_at(self.s_burn):]

    def at(self, s: float) -> np.ndarray:
        return self.values[self.schedule.step_at(s)]


@dataclass(eq=False)
class InvariantDensity:
    schedule: StepSchedule
    values: np.ndarray
    valid_until: float

    @property
    def bounds(self):
        stop = self.schedule.step_at(self.valid_until)
        v = self.values[:stop + 1]
        return float(v.min()), float(v.max())

    def weights(self) -> np.ndarray:
        return self.values


@dataclass(eq=False)
class DriftProcess:
    beta: np.ndarray
    mean: float
    std: float
    tol: float = 1e-8

    @property
    def deterministic(self) -> bool:
        return bool(self.std <= self.tol)


@dataclass
class DecayEstimate:
    gamma0: float
    r2: float
    s_burn: float
    times: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# Invariant density and drift
# ---------------------------------------------------------------------------


def solve_invariant_density(gen: GeneratorMatrix, schedule: StepSchedule,
                            s_pburn: float = 0.0, p_end=None) -> InvariantDensity:
    """Backward sweep of ``-dp/ds = L*_s p`` from ``p = 1`` at the schedule end.

    Values are burn-in converged on ``[s0, end - s_pburn]``.

    Raises
    ------
    StepSizeError
        If an Euler step produced a non-positive density value.
    """
    check_step(gen, schedule)
    N = gen.n
    p_end = np.ones(N) if p_end is None else np.asarray(p_end, dtype=float)
    out = np.empty((schedule.n + 1, N))
    bad = _kernels.density_sweep(gen.W, gen.D, schedule.states, schedule.taus, p_end,
                                 gen.dxi, out)
    if bad >= 0:
        raise StepSizeError(f"density lost positivity at step {bad}")
    return InvariantDensity(schedule, out, schedule.end - s_pburn)


def uniform_density(gen: GeneratorMatrix, schedule: StepSchedule) -> InvariantDensity:
    return InvariantDensity(schedule, np.ones((schedule.n + 1, gen.n)), schedule.end)


def compute_beta(gen: GeneratorMatrix, schedule: StepSchedule, p: InvariantDensity,
                 tol: float = 1e-8) -> DriftProcess:
    """Drift ``beta_n = sum_i (sum_j Z1[k, i, j]) p_i^{n+1} dxi`` over the converged window."""
    beta = np.einsum("ni,ni->n", gen.rZ1[schedule.states], p.values[1:]) * gen.dxi
    stop = schedule.step_at(p.valid_until)
    b = beta[:stop]
    w = schedule.taus[:stop]
    mean = float(np.sum(w * b) / np.sum(w))
    std = float(np.sqrt(np.sum(w * (b - mean) ** 2) / np.sum(w)))
    return DriftProcess(beta, mean, std, tol)


# ---------------------------------------------------------------------------
# Right-hand sides and the generic corrector solver
# ---------------------------------------------------------------------------


def _weights(gen, schedule, p):
    return np.ones((schedule.n + 1, gen.n)) if p is None else p.values


def corrector_rhs(kind: str, gen: GeneratorMatrix, schedule: StepSchedule, *,
                  p: Optional[InvariantDensity] = None, beta=None, chi1=None, chi2=None,
                  theta_eff=None, tol: float = 1e-8) -> np.ndarray:
    """Per-step right-hand side ``rhs[n]`` for the corrector equations.

    ``kind`` is one of ``g``, ``g_plus_beta``, ``h_minus_theta``,
    ``H_minus_avg``, ``chi1_itself``.  ``chi1`` / ``chi2`` are
    :class:`CorrectorField` objects on the same schedule; ``beta`` is the
    per-step drift (zero if omitted).

    Raises
    ------
    SolvabilityError
        If the weighted mean of the result exceeds ``tol`` at some step.
    """
    if kind not in RHS_KINDS:
        raise ConfigurationError(f"unknown right-hand side {kind!r}")
    k = schedule.states
    q = _weights(gen, schedule, p)[1:]
    dxi = gen.dxi
    b = np.zeros(schedule.n) if beta is None else np.asarray(beta, dtype=float)
    if kind == "g":
        rhs = -gen.rZ1[k]
    elif kind == "g_plus_beta":
        rhs = -gen.rZ1[k] + b[:, None]
    elif kind == "h_minus_theta":
        if chi1 is None:
            raise ConfigurationError("h needs chi1")
        c = chi1.values
        rhs = 0.5 * gen.rZ2[k] - np.einsum("nij,nj->ni", gen.Z1[k], c[:-1]) + b[:, None] * c[1:]
        rhs = rhs - (np.einsum("ni,ni->n", rhs, q) * dxi)[:, None]
    elif kind == "H_minus_avg":
        if chi1 is None or chi2 is None or theta_eff is None:
            raise ConfigurationError("H needs chi1, chi2 and theta_eff")
        c1, c2 = chi1.values, chi2.values
        rhs = (-gen.rZ3[k] / 6.0 + 0.5 * np.einsum("nij,nj->ni", gen.Z2[k], c1[:-1])
               - np.einsum("nij,nj->ni", gen.Z1[k], c2[:-1])
               - c1[1:] * float(theta_eff) + b[:, None] * c2[1:])
        rhs = rhs - (np.einsum("ni,ni->n", rhs, q) * dxi)[:, None]
    else:
        if chi1 is None:
            raise ConfigurationError("chi1_itself needs chi1")
        rhs = chi1.values[1:].copy()
        rhs = rhs - (np.einsum("ni,ni->n", rhs, q) * dxi)[:, None]
    compat = np.abs(np.einsum("ni,ni->n", rhs, q) * dxi)
    if compat.size and compat.max() > tol:
        raise SolvabilityError(
            f"right-hand side {kind!r} violates its compatibility condition "
            f"(max weighted mean {compat.max():.3g})")
    return np.ascontiguousarray(rhs)


def solve_stationary_corrector(gen: GeneratorMatrix, schedule: StepSchedule, rhs, *,
                               p: Optional[InvariantDensity] = None,
                               normalization: str = "p-weighted", s_burn: float = 0.0,
                               chi0=None, name: str = "chi") -> CorrectorField:
    """Explicit-Euler evolution ``d chi/ds = L_s chi + rhs`` with per-step renormalisation.

    The production window starts at ``s_burn``; the caller sizes it with
    :func:`estimate_decay_rate`.
    """
    check_step(gen, schedule)
    if normalization not in ("p-weighted", "plain"):
        raise ConfigurationError(f"unknown normalization {normalization!r}")
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if rhs.shape != (schedule.n, gen.n):
        raise ConfigurationError("rhs does not match the schedule")
    w = _weights(gen, schedule, p if normalization == "p-weighted" else None)
    chi0 = np.zeros(gen.n) if chi0 is None else np.asarray(chi0, dtype=float)
    out = np.empty((schedule.n + 1, gen.n))
    drift = np.empty(schedule.n)
    _kernels.corrector_sweep(gen.W, schedule.states, schedule.taus, rhs,
                             np.ascontiguousarray(w), chi0, gen.dxi, True, out, drift)
    return CorrectorField(schedule, out, normalization, s_burn, drift, name)


def corrector_residual(gen: GeneratorMatrix, field_: CorrectorField, rhs) -> float:
    """Max norm of ``(chi^{n+1} - chi^n)/tau - L chi^n - rhs^n`` with the renormalisation shift removed."""
    sch = field_.schedule
    c = field_.values
    Lc = np.einsum("nij,nj->ni", gen.W[sch.states], c[:-1]) - gen.D[sch.states] * c[:-1]
    res = (c[1:] + field_.drift[:, None] - c[:-1]) / sch.taus[:, None] - Lc - rhs
    return float(np.abs(res).max())


def estimate_decay_rate(gen: GeneratorMatrix, path: DriverPath, ds: float,
                        s_pilot: Optional[float] = None, seed: int = 0,
                        factor: float = 20.0) -> DecayEstimate:
    """Two-initialisation pilot: fit ``log ||chi_a - chi_b||`` against ``s``.

    The difference of two solutions with the same forcing solves the
    homogeneous equation; its oscillation norm decays like ``exp(-gamma0 s)``.
    The burn-in is ``factor / gamma0`` (``exp(-20) < 1e-8``).
    """
    if s_pilot is None:
        s_pilot = min(path.horizon, 400.0)
    s_pilot = ds * np.floor(s_pilot / ds + 1e-9)
    sch = build_schedule(path, 0.0, s_pilot, ds)
    check_step(gen, sch)
    delta = make_rng(seed, 991).standard_normal(gen.n)
    norms = np.empty(sch.n + 1)
    rec = _kernels.homogeneous_sweep(gen.W, sch.states, sch.taus, delta, 1, norms)
    norms = norms[:rec]
    times = sch.starts[:rec]
    rel = norms / norms[0]
    use = (rel < 1e-1) & (rel > 1e-11)
    if use.sum() < 10:
        use = rel > 1e-13
        use[:2] = False
    if use.sum() < 5:
        raise NonConvergenceError("pilot run too short to fit a decay rate")
    y = np.log(norms[use])
    A = np.vstack([times[use], np.ones(use.sum())]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    r2 = 1.0 - np.sum((y - fit) ** 2) / max(np.sum((y - y.mean()) ** 2), 1e-300)
    gamma0 = -float(coef[0])
    if not gamma0 > 0:
        raise NonConvergenceError(f"estimated decay rate {gamma0:.3g} is not positive")
    s_burn = ds * np.ceil(factor / gamma0 / ds)
    return DecayEstimate(gamma0, float(r2), float(s_burn), times, norms)


# ---------------------------------------------------------------------------
# Fused production sweep
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CellSolution:
    """Per-step outputs of :func:`solve_cell_problems`.

    ``theta[n]``, ``beta[n]`` and ``Hp[n]`` (the p-weighted torus average of
    ``H^n``) belong to step ``n``; ``drift1`` / ``drift2`` are the weighted
    corrector means before renormalisation.  Snapshots are stored for the
    requested boundary indices.
    """

    schedule: StepSchedule
    theta: np.ndarray
    beta: np.ndarray
    Hp: np.ndarray
    drift1: np.ndarray
    drift2: np.ndarray
    saved_steps: np.ndarray
    chi1: np.ndarray
    chi2: np.ndarray
    H: np.ndarray
    final_chi1: np.ndarray
    final_chi2: np.ndarray

    def snapshot(self, step: int):
        idx = int(np.searchsorted(self.saved_steps, step))
        if idx >= len(self.saved_steps) or self.saved_steps[idx] != step:
            raise DomainError(f"step {step} was not saved")
        return self.chi1[idx], self.chi2[idx], self.H[idx]


def solve_cell_problems(gen: GeneratorMatrix, schedule: StepSchedule, *,
                        p: Optional[InvariantDensity] = None, use_beta: bool = False,
                        save_steps=(), chi1_0=None, chi2_0=None) -> CellSolution:
    """Advance ``chi1`` and ``chi2`` together and record ``Theta``, ``beta`` and ``<H>_p``.

    ``use_beta`` adds the drift ``beta(s)`` to the first corrector equation
    and ``beta chi1`` to the local flux (non-symmetric mode).  ``p`` defaults
    to the uniform density.
    """
    check_step(gen, schedule)
    n, N = schedule.n, gen.n
    P = np.ones((n + 1, N)) if p is None else np.ascontiguousarray(p.values)
    if P.shape != (n + 1, N):
        raise ConfigurationError("density does not match the schedule")
    saved = np.unique(np.asarray(save_steps, dtype=np.int64))
    if saved.size and (saved.min() < 0 or saved.max() > n):
        raise DomainError("save step outside the schedule")
    index = np.full(n + 1, -1, dtype=np.int64)
    index[saved] = np.arange(saved.size)
    chi1 = np.zeros(N) if chi1_0 is None else np.array(chi1_0, dtype=float)
    chi2 = np.zeros(N) if chi2_0 is None else np.array(chi2_0, dtype=float)
    c1o = np.zeros((saved.size, N))
    c2o = np.zeros((saved.size, N))
    Ho = np.zeros((saved.size, N))
    theta, beta, Hp = np.empty(n), np.empty(n), np.empty(n)
    d1, d2 = np.empty(n), np.empty(n)
    _kernels.cell_sweep(gen.W, gen.Z1, gen.Z2, gen.rZ1, gen.rZ2, gen.rZ3,
                        schedule.states, schedule.taus, P, bool(use_beta), chi1, chi2,
                        gen.dxi, index, c1o, c2o, Ho, theta, beta, Hp, d1, d2)
    return CellSolution(schedule, theta, beta, Hp, d1, d2, saved, c1o, c2o, Ho, chi1, chi2)
