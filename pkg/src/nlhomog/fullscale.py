"""The eps-problem, the homogenized solution and the normalized difference ``U^eps``.

Physical and fast time are tied by ``s = s_offset + t / eps^2``; ``s_offset``
is the corrector burn-in, so that the correctors are stationary at ``t = 0``.
The eps-problem is advanced by explicit Euler on the same step schedule as
the correctors (step ``eps^2 tau`` in physical time), which keeps the
discrete homogenized coefficients of both schemes identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .corrector import (InvariantDensity, StepSchedule, build_schedule, estimate_decay_rate,
                        solve_cell_problems, solve_invariant_density)
from .effective import EffectiveCoefficients, fast_step, resolve_mode
from .environment import EnvironmentModel, gaussian_bump, sample_path
from .errors import ConfigurationError, ContractError, DomainError, ResolutionError, TruncationError
from .torus import GeneratorMatrix, PhysicalGrid, RescaledOperator, assemble_generator

__all__ = [
    "PhysicalGrid", "SpectralBox", "SimulationField", "HomogenizedSolution",
    "FluctuationProcess", "FullScaleSetup", "ReplicateResult", "solve_homogenized",
    "solve_epsilon_problem", "assemble_U_eps", "kappa_process", "simulate_R1",
    "prepare_fullscale", "run_replicate", "forced_problem", "gaussian_test_functions",
    "sample_kappa",
]


class SpectralBox:
    """Uniform periodic grid on ``[-B, B)`` with ``n`` nodes (no fast-variable structure)."""

    def __init__(self, half_width: float, n: int):
        self.half_width = float(half_width)
        self.n = int(n)
        self.dx = 2 * self.half_width / self.n
        self.x = -self.half_width + self.dx * np.arange(self.n)

    def inner(self, f, g) -> float:
        return float(np.dot(f, g) * self.dx)

    def norm(self, f) -> float:
        return float(np.sqrt(np.dot(f, f) * self.dx))

    def describe(self) -> dict:
        return {"half_width": self.half_width, "n_nodes": self.n, "dx": self.dx}


def default_half_width(theta: float, T: float) -> float:
    """Box half-width ``6 + 4 sqrt(2 theta T)``."""
    return 6.0 + 4.0 * np.sqrt(2.0 * max(theta, 0.0) * T)


def _wrap(x, B):
    return np.mod(x + B, 2 * B) - B


def tail_mass(values, grid, margin: float = 1.0) -> float:
    """L2 fraction of ``values`` outside ``|x| <= B - margin``."""
    nrm = grid.norm(values)
    if nrm == 0:
        return 0.0
    out = np.abs(grid.x) > grid.half_width - margin
    return float(np.sqrt(np.sum(values[out] ** 2) * grid.dx) / nrm)


@dataclass(eq=False)
class SimulationField:
    values: np.ndarray
    t: float
    kind: str
    grid: object
    tail_mass: float = 0.0

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def project(self, phi) -> float:
        return self.grid.inner(self.values, phi)


class HomogenizedSolution:
    """Spectral solution of ``du/dt = theta u''`` on the periodic box.

    ``evaluate(t, deriv, shift)`` returns ``d^m u / dx^m (x - shift, t)`` on the
    grid using Fourier multipliers, so shifted and differentiated values carry
    no interpolation error.
    """

    def __init__(self, theta: float, initial, grid, tail_tol: float = 1e-10):
        if not theta > 0:
            raise DomainError(f"effective diffusivity {theta} is not positive")
        self.theta = float(theta)
        self.grid = grid
        vals = initial(grid.x) if callable(initial) else np.asarray(initial, dtype=float)
        if vals.shape != (grid.n,):
            raise ConfigurationError("initial datum does not match the grid")
        self.initial = np.asarray(vals, dtype=float)
        self.k = 2 * np.pi * np.fft.rfftfreq(grid.n, grid.dx)
        self.hat0 = np.fft.rfft(self.initial)
        amp = np.abs(self.hat0)
        if amp.max() > 0 and amp[-max(1, len(amp) // 16):].max() > tail_tol * amp.max():
            raise ResolutionError("initial datum is not resolved by the grid (spectral tail)")

    def hat(self, t: float, deriv: int = 0, shift: float = 0.0) -> np.ndarray:
        k = self.k
        h = self.hat0 * np.exp(-self.theta * k * k * t) * (1j * k) ** deriv
        if shift:
            h = h * np.exp(-1j * k * shift)
        if deriv % 2 == 1 and self.grid.n % 2 == 0:
            h[-1] = 0.0
        return h

    def evaluate(self, t: float, deriv: int = 0, shift: float = 0.0) -> np.ndarray:
        if t == 0 and deriv == 0 and not shift:
            return self.initial.copy()
        return np.fft.irfft(self.hat(t, deriv, shift), self.grid.n)


def solve_homogenized(theta_eff, initial, T: float, grid) -> HomogenizedSolution:
    """Homogenized solution with data ``initial`` (callable or grid values)."""
    theta = float(np.asarray(theta_eff).reshape(-1)[0])
    if T < 0:
        raise DomainError("horizon must be non-negative")
    return HomogenizedSolution(theta, initial, grid)


@dataclass(eq=False)
class FluctuationProcess:
    times: np.ndarray
    kappa: np.ndarray
    eps: float
    seed: int


def kappa_process(schedule: StepSchedule, theta_steps, theta_eff: float, eps: float,
                  T: float, s_offset: float, seed: int = 0, n_times: Optional[int] = None
                  ) -> FluctuationProcess:
    """``kappa^eps(t) = eps^-1 int_0^t Theta~(r / eps^2) dr`` on nominal grid times.

    With ``Theta`` constant on each step this is ``eps * sum tau_n (Theta_n - Theta_eff)``.
    """
    s_end = s_offset + T / eps ** 2
    if s_end > schedule.end + 1e-9:
        raise ConfigurationError("driver path shorter than T / eps^2")
    i0 = schedule.step_at(s_offset)
    i1 = schedule.step_at(s_end)
    incr = eps * schedule.taus[i0:i1] * (np.asarray(theta_steps)[i0:i1] - theta_eff)
    cum = np.concatenate([[0.0], np.cumsum(incr)])
    g0 = int(round((s_offset - schedule.s0) / schedule.ds))
    g1 = int(round((s_end - schedule.s0) / schedule.ds))
    gsteps = schedule.grid_steps[g0:g1 + 1] - i0
    times = (np.arange(g0, g1 + 1) - g0) * schedule.ds * eps ** 2
    kap = cum[gsteps]
    if n_times is not None:
        sel = np.unique(np.round(np.linspace(0, len(times) - 1, n_times)).astype(int))
        times, kap = times[sel], kap[sel]
    return FluctuationProcess(times, kap, eps, seed)


def _evolve(op: RescaledOperator, schedule: StepSchedule, i0: int, i1: int, u,
            snap_steps=(), forcing: Optional[Callable[[int], np.ndarray]] = None,
            eps: float = 1.0, monitor: bool = False):
    """Euler steps ``i0 .. i1 - 1``; ``forcing(n)`` returns the slow-time source at step n."""
    u = np.array(u, dtype=float)
    buf = np.empty_like(u)
    snaps = {}
    want = set(int(s) for s in snap_steps)
    norms = [] if monitor else None
    if i0 in want:
        snaps[i0] = u.copy()
    for n in range(i0, i1):
        tau = schedule.taus[n]
        op.step(schedule.states[n], u, tau, buf)
        if forcing is not None:
            buf += eps ** 2 * tau * forcing(n)
        u, buf = buf, u
        if monitor:
            norms.append(float(np.dot(u, u)))
        if n + 1 in want:
            snaps[n + 1] = u.copy()
    return u, snaps, norms


@dataclass
class FullScaleSetup:
    """Everything shared by the replicates of one environment."""

    env: EnvironmentModel
    gen: GeneratorMatrix
    op: RescaledOperator
    eff: EffectiveCoefficients
    T: float
    ds: float
    s_burn: float
    mode: str
    initial: Callable = gaussian_bump
    half_width: Optional[float] = None
    test_functions: Sequence = ((0.0, 0.5), (0.7, 0.8), (-1.0, 1.2))
    n_snapshots: int = 10
    seed: int = 0
    tail_tol: float = 1e-6

    def grid(self, eps: float) -> PhysicalGrid:
        B = self.half_width or default_half_width(self.eff.theta, self.T)
        grid = PhysicalGrid.covering(eps, self.env.n_torus, B)
        self.op.check_grid(grid)
        return grid

    def fast_horizon(self, eps: float) -> float:
        S = self.T / eps ** 2
        if abs(S / self.ds - round(S / self.ds)) > 1e-8:
            raise ConfigurationError(
                f"T / eps^2 = {S} is not a multiple of the fast step {self.ds}")
        return S


def prepare_fullscale(env: EnvironmentModel, eff: EffectiveCoefficients, T: float, *,
                      mode: str = "auto", seed: int = 0, ds: Optional[float] = None,
                      s_burn: Optional[float] = None, **kwargs) -> FullScaleSetup:
    """Assemble the operators and burn-in for replicate runs.

    Raises
    ------
    ContractError
        In non-symmetric mode when the drift is not deterministic (H6).
    """
    mode = resolve_mode(env, mode)
    if mode == "nonsymmetric" and not eff.h6:
        raise ContractError("non-symmetric diffusion approximation needs a deterministic drift")
    gen = assemble_generator(env)
    ds = (eff.ds or fast_step(env)) if ds is None else ds
    if s_burn is None:
        s_burn = eff.s_burn if eff.s_burn > 0 else estimate_decay_rate(
            gen, sample_path(env.driver, 400.0, seed, 7919), ds, seed=seed).s_burn
    return FullScaleSetup(env, gen, RescaledOperator(gen), eff, float(T), ds, float(s_burn),
                          mode, seed=seed, **kwargs)


def gaussian_test_functions(grid, specs, shift: float = 0.0):
    """Gaussian bumps ``exp(-(x - c - shift)^2 / (2 w^2))`` wrapped on the periodic box."""
    out = []
    for c, w in specs:
        y = _wrap(grid.x - c - shift, grid.half_width)
        out.append(np.exp(-0.5 * (y / w) ** 2))
    return np.array(out)


def assemble_U_eps(u_eps, u0: HomogenizedSolution, chi1_nodes, eps: float, t: float,
                   mode: str = "symmetric", beta_bar: float = 0.0, h6: bool = True,
                   include_chi1: bool = True) -> SimulationField:
    """``U^eps = (u^eps - u0(x^eps)) / eps - chi1(x / eps) u0'(x^eps)``.

    ``x^eps = x - beta_bar t / eps`` in non-symmetric mode.  ``chi1_nodes`` is
    the first corrector on the torus nodes at the matching fast time.
    """
    if mode == "nonsymmetric" and not h6:
        raise ContractError("moving frame requires a deterministic drift (H6)")
    grid = u0.grid
    shift = beta_bar * t / eps if mode == "nonsymmetric" else 0.0
    vals = (np.asarray(u_eps) - u0.evaluate(t, 0, shift)) / eps
    if include_chi1:
        chi = np.asarray(chi1_nodes)[grid.residues]
        vals = vals - chi * u0.evaluate(t, 1, shift)
    return SimulationField(vals, t, "U_eps", grid, tail_mass(vals, grid))


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    eps: float
    replicate: int
    seed: int
    kappa_T: float
    proj_U: np.ndarray
    proj_U_ablated: np.ndarray
    norm_U: float
    norm_U_ablated: float
    error_L2: float
    error_L2_zeroth: float
    tail_mass: float
    max_norm_increase: float
    R1_gap: Optional[float] = None
    proj_R1: Optional[np.ndarray] = None
    kappa: Optional[np.ndarray] = field(default=None, repr=False)
    times: Optional[np.ndarray] = field(default=None, repr=False)
    fields: Optional[dict] = field(default=None, repr=False)

    def to_row(self) -> dict:
        row = {"eps": self.eps, "replicate": self.replicate, "seed": self.seed,
               "kappa_T": self.kappa_T, "norm_U": self.norm_U,
               "norm_U_ablated": self.norm_U_ablated, "error_L2": self.error_L2,
               "error_L2_zeroth": self.error_L2_zeroth, "tail_mass": self.tail_mass}
        for j, v in enumerate(self.proj_U):
            row[f"proj_U_{j}"] = float(v)
        for j, v in enumerate(self.proj_U_ablated):
            row[f"proj_U_ablated_{j}"] = float(v)
        if self.R1_gap is not None:
            row["R1_gap"] = self.R1_gap
        return row


def _replicate_fields(setup: FullScaleSetup, eps: float, replicate: int):
    """Driver path, schedule, density and correctors for one replicate."""
    S = setup.fast_horizon(eps)
    s0 = setup.s_burn
    s_pb = setup.s_burn if setup.mode == "nonsymmetric" else 0.0
    horizon = s0 + S + s_pb
    path = sample_path(setup.env.driver, horizon, setup.seed, replicate)
    sch = build_schedule(path, 0.0, horizon, setup.ds)
    p = None
    if setup.mode == "nonsymmetric":
        p = solve_invariant_density(setup.gen, sch, s_pb)
    i_end = sch.step_at(s0 + S)
    sub = sch.slice(0, int(round((s0 + S) / setup.ds)))
    psub = None if p is None else InvariantDensity(sub, p.values[:sub.n + 1], sub.end)
    ns = setup.n_snapshots
    snap_g = np.round(np.linspace(s0, s0 + S, ns + 1) / setup.ds).astype(int)
    snap_steps = sch.grid_steps[snap_g]
    cells = solve_cell_problems(setup.gen, sub, p=psub, use_beta=setup.mode == "nonsymmetric",
                                save_steps=snap_steps)
    return sch, cells, snap_steps, i_end


def sample_kappa(setup: FullScaleSetup, eps: float, replicate: int,
                 n_times: Optional[int] = None) -> FluctuationProcess:
    """``kappa^eps`` on ``[0, T]`` along replicate path ``replicate`` (correctors only)."""
    S = setup.fast_horizon(eps)
    s0 = setup.s_burn
    s_pb = setup.s_burn if setup.mode == "nonsymmetric" else 0.0
    horizon = s0 + S + s_pb
    path = sample_path(setup.env.driver, horizon, setup.seed, replicate)
    sch = build_schedule(path, 0.0, horizon, setup.ds)
    g_end = int(round((s0 + S) / setup.ds))
    sub = sch.slice(0, g_end)
    p = None
    if setup.mode == "nonsymmetric":
        full = solve_invariant_density(setup.gen, sch, s_pb)
        p = InvariantDensity(sub, full.values[:sub.n + 1], sub.end)
    cells = solve_cell_problems(setup.gen, sub, p=p, use_beta=setup.mode == "nonsymmetric")
    return kappa_process(sub, cells.theta, setup.eff.theta, eps, setup.T, s0, setup.seed,
                         n_times)


def run_replicate(setup: FullScaleSetup, eps: float, replicate: int,
                  with_R1: bool = False, keep_kappa: bool = False,
                  keep_fields: bool = False) -> ReplicateResult:
    """One realisation: correctors along the path, the eps-problem and all diagnostics."""
    sch, cells, snap_steps, i_end = _replicate_fields(setup, eps, replicate)
    grid = setup.grid(eps)
    eff = setup.eff
    nonsym = setup.mode == "nonsymmetric"
    beta = eff.beta if nonsym else 0.0
    u0 = solve_homogenized(eff.theta, setup.initial, setup.T, grid)
    i0 = int(snap_steps[0])
    u, snaps, norms = _evolve(setup.op, sch, i0, i_end, u0.initial, snap_steps,
                              monitor=setup.mode == "symmetric")
    inc = 0.0
    if norms:
        nn = np.sqrt(np.concatenate([[np.dot(u0.initial, u0.initial)], norms]))
        inc = float(max(0.0, np.max(np.diff(nn) / nn[:-1])))
    T = setup.T
    times = np.array([(sch.starts[s] if s < sch.n else sch.end) for s in snap_steps]) - setup.s_burn
    times = times * eps ** 2
    err1, err0 = [], []
    for step, t in zip(snap_steps, times):
        chi1, _, _ = cells.snapshot(step)
        shift = beta * t / eps
        ue = snaps[int(step)]
        base = ue - u0.evaluate(t, 0, shift)
        err0.append(grid.norm(base) ** 2)
        err1.append(grid.norm(base - eps * chi1[grid.residues] * u0.evaluate(t, 1, shift)) ** 2)
    error_L2 = float(np.sqrt(trapezoid(err1, times)))
    error0 = float(np.sqrt(trapezoid(err0, times)))
    chi1_T, _, _ = cells.snapshot(int(snap_steps[-1]))
    U = assemble_U_eps(u, u0, chi1_T, eps, T, setup.mode, beta, eff.h6)
    Ua = assemble_U_eps(u, u0, chi1_T, eps, T, setup.mode, beta, eff.h6, include_chi1=False)
    shift_T = beta * T / eps if nonsym else 0.0
    phis = gaussian_test_functions(grid, setup.test_functions, shift_T)
    kap = kappa_process(cells.schedule, cells.theta, eff.theta, eps, T, setup.s_burn,
                        setup.seed)
    if U.tail_mass > setup.tail_tol and grid.norm(u) > 0:
        tm = tail_mass(u, grid)
        if tm > setup.tail_tol:
            raise TruncationError(f"tail mass {tm:.3g} exceeds {setup.tail_tol}; enlarge the box")
    res = ReplicateResult(
        eps=eps, replicate=replicate, seed=setup.seed, kappa_T=float(kap.kappa[-1]),
        proj_U=phis @ U.values * grid.dx, proj_U_ablated=phis @ Ua.values * grid.dx,
        norm_U=U.norm(), norm_U_ablated=Ua.norm(), error_L2=error_L2,
        error_L2_zeroth=error0, tail_mass=tail_mass(u, grid), max_norm_increase=inc)
    if keep_kappa:
        res.kappa, res.times = kap.kappa, kap.times
    if keep_fields:
        res.fields = {"u_eps": u, "U_eps": U.values, "x": np.asarray(grid.x)}
    if with_R1:
        R1 = simulate_R1(setup, sch, cells.theta, u0, eps, i0, i_end)
        d2 = u0.evaluate(T, 2, shift_T)
        res.R1_gap = grid.norm(R1.values - res.kappa_T * d2)
        res.proj_R1 = phis @ R1.values * grid.dx
    return res


def simulate_R1(setup: FullScaleSetup, schedule: StepSchedule, theta_steps, u0: HomogenizedSolution,
                eps: float, i0: int, i1: int) -> SimulationField:
    """Solve ``dR/dt - L^eps R = eps^-1 Theta~(t / eps^2) u0''(x^eps, t)``, ``R(0) = 0``."""
    beta = setup.eff.beta if setup.mode == "nonsymmetric" else 0.0
    th = np.asarray(theta_steps) - setup.eff.theta
    grid = u0.grid

    def forcing(n):
        t = (schedule.starts[n] - setup.s_burn) * eps ** 2
        return th[n] / eps * u0.evaluate(t, 2, beta * t / eps)

    R, _, _ = _evolve(setup.op, schedule, i0, i1, np.zeros(grid.n), forcing=forcing, eps=eps)
    return SimulationField(R, setup.T, "R1", grid, tail_mass(R, grid))


def solve_epsilon_problem(env: EnvironmentModel, initial, eps: float, T: float, seed: int, *,
                          replicate: int = 0, ds: Optional[float] = None, s_offset: float = 0.0,
                          half_width: Optional[float] = None, n_snapshots: int = 4,
                          refine: int = 1, theta_hint: float = 0.1,
                          op: Optional[RescaledOperator] = None):
    """Explicit-Euler solution of the eps-problem; returns snapshot fields.

    ``refine`` splits every fast step into that many equal sub-steps (for
    refinement studies).
    """
    ds = fast_step(env) if ds is None else ds
    S = T / eps ** 2
    if abs(S / ds - round(S / ds)) > 1e-8:
        raise ConfigurationError(f"T / eps^2 = {S} is not a multiple of the fast step {ds}")
    if ds > env.stable_step() * (1 + 1e-12):
        raise ConfigurationError("time step exceeds the explicit-Euler bound")
    op = RescaledOperator(assemble_generator(env)) if op is None else op
    B = half_width or default_half_width(theta_hint, T)
    grid = PhysicalGrid.covering(eps, env.n_torus, B)
    op.check_grid(grid)
    path = sample_path(env.driver, s_offset + S, seed, replicate)
    sch = build_schedule(path, s_offset, s_offset + S, ds)
    if refine > 1:
        sch = _refine(sch, refine)
    u0 = initial(grid.x) if callable(initial) else np.asarray(initial, dtype=float)
    gsnap = np.round(np.linspace(0, sch.n_cells, n_snapshots + 1)).astype(int)
    steps = sch.grid_steps[gsnap]
    u, snaps, norms = _evolve(op, sch, 0, sch.n, u0, steps, monitor=True)
    out = []
    for g, st in zip(gsnap, steps):
        t = g * sch.ds * eps ** 2
        vals = snaps[int(st)]
        tm = tail_mass(vals, grid)
        out.append(SimulationField(vals, t, "u_eps", grid, tm))
    return out


def _refine(sch: StepSchedule, m: int) -> StepSchedule:
    starts = (sch.starts[:, None] + sch.taus[:, None] * np.arange(m)[None, :] / m).ravel()
    taus = np.repeat(sch.taus / m, m)
    return StepSchedule(starts, taus, np.repeat(sch.states, m), np.repeat(sch.cells, m),
                        sch.grid_steps * m, sch.s0, sch.ds)


def forced_problem(setup: FullScaleSetup, eps: float, replicate: int, kind: str,
                   U: Optional[Callable] = None, n_monitor: int = 20) -> np.ndarray:
    """Solve ``dv/dt - L^eps v = f`` with an oscillating source; return ``||v(t_j)||``.

    ``kind = "theta"`` uses ``f = theta(t / eps^2) U(x^eps, t)`` with
    ``theta`` the centred indicator of driver state 0; ``kind = "ell"`` uses
    ``f = ell(x / eps, t / eps^2) U(x^eps, t)`` with ``ell = cos(2 pi xi)``
    minus its p-weighted mean; ``kind = "hom"`` uses ``f = U`` and returns
    the distance to the homogenized forced solution, which for ``U = u0`` is
    ``t u0(x^eps, t)``.
    """
    if kind not in ("theta", "ell", "hom"):
        raise ConfigurationError(f"unknown forcing {kind!r}")
    if kind == "hom" and U is not None:
        raise ConfigurationError("the homogenized reference is only available for U = u0")
    S = setup.fast_horizon(eps)
    s0 = setup.s_burn
    s_pb = setup.s_burn if setup.mode == "nonsymmetric" else 0.0
    path = sample_path(setup.env.driver, s0 + S + s_pb, setup.seed, replicate)
    sch = build_schedule(path, 0.0, s0 + S + s_pb, setup.ds)
    grid = setup.grid(eps)
    beta = setup.eff.beta if setup.mode == "nonsymmetric" else 0.0
    u0 = solve_homogenized(setup.eff.theta, setup.initial, setup.T, grid)
    Ufun = U if U is not None else (lambda t, shift: u0.evaluate(t, 0, shift))
    i0, i1 = sch.step_at(s0), sch.step_at(s0 + S)
    N = setup.env.n_torus
    if kind == "theta":
        pi0 = setup.env.driver.pi[0]
        amp = (sch.states == 0).astype(float) - pi0
        spatial = None
    elif kind == "hom":
        amp = np.ones(sch.n)
        spatial = None
    else:
        ell = np.cos(2 * np.pi * np.arange(N) / N)
        if setup.mode == "nonsymmetric":
            p = solve_invariant_density(setup.gen, sch, s_pb).values
            means = p[1:] @ ell / N
        else:
            means = np.full(sch.n, ell.mean())
        spatial = ell[grid.residues]
        amp = None

    def forcing(n):
        t = (sch.starts[n] - s0) * eps ** 2
        base = Ufun(t, beta * t / eps)
        if spatial is None:
            return amp[n] * base
        return (spatial - means[n]) * base

    mon = np.round(np.linspace(s0, s0 + S, n_monitor + 1) / setup.ds).astype(int)
    steps = sch.grid_steps[mon]
    _, snaps, _ = _evolve(setup.op, sch, i0, i1, np.zeros(grid.n), steps, forcing=forcing,
                          eps=eps)
    if kind != "hom":
        return np.array([grid.norm(snaps[int(s)]) for s in steps])
    out = []
    for g, s in zip(mon, steps):
        t = (g * setup.ds - s0) * eps ** 2
        out.append(grid.norm(snaps[int(s)] - t * Ufun(t, beta * t / eps)))
    return np.array(out)
