"""Limit SPDE ``dv = theta v'' dt + A u0'' dW + H u0''' dt`` with ``v(0) = 0``.

The noise is finite dimensional: one scalar Brownian motion (``d = 1``)
multiplying the deterministic field ``u0''``.  Every Fourier mode is advanced
with its exact heat factor, so only the forcing is discretised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .environment import make_rng
from .errors import ConfigurationError, DomainError, ResolutionError
from .fullscale import HomogenizedSolution

__all__ = ["LimitProblem", "BrownianDriver", "LimitSample", "sample_limit_solution",
           "drift_only_solution", "projection_moments", "sample_projections",
           "expected_sq_norm"]


def _scalar(x, name):
    a = np.asarray(x, dtype=float)
    if a.size != 1:
        raise ConfigurationError(f"{name} must be scalar in one dimension")
    return float(a.reshape(-1)[0])


@dataclass
class LimitProblem:
    """Coefficients, spectral homogenized solution and horizon of the limit equation."""

    theta: float
    A: float
    H: float
    u0: HomogenizedSolution
    T: float

    def __post_init__(self):
        self.theta = _scalar(self.theta, "theta")
        self.A = _scalar(self.A, "A")
        self.H = _scalar(self.H, "H")
        if not self.theta > 0:
            raise DomainError("effective diffusivity must be positive")
        if self.A < 0:
            raise DomainError("noise amplitude must be non-negative (PSD root)")
        if abs(self.u0.theta - self.theta) > 1e-14 * self.theta:
            raise ConfigurationError("homogenized solution uses a different diffusivity")

    @classmethod
    def from_effective(cls, eff, u0: HomogenizedSolution, T: float) -> "LimitProblem":
        return cls(eff.theta, eff.A, eff.H, u0, T)

    @property
    def grid(self):
        return self.u0.grid

    def heat(self, t: float) -> np.ndarray:
        return np.exp(-self.theta * self.u0.k ** 2 * t)


@dataclass
class BrownianDriver:
    """Brownian increments on a uniform grid (variance ``dt`` each)."""

    increments: np.ndarray
    dt: float
    seed: int
    stream: int = 0

    @classmethod
    def sample(cls, T: float, n_steps: int, seed: int, stream: int = 0) -> "BrownianDriver":
        dt = T / n_steps
        rng = make_rng(seed, stream)
        return cls(rng.normal(0.0, np.sqrt(dt), n_steps), dt, seed, stream)

    @property
    def n_steps(self) -> int:
        return len(self.increments)

    @property
    def W(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.increments)])


@dataclass(eq=False)
class LimitSample:
    times: np.ndarray
    values: np.ndarray
    seed: int
    stream: int


def _check_resolution(hat, tol=1e-10):
    amp = np.abs(hat)
    if amp.max() > 0 and amp[-max(1, len(amp) // 16):].max() > tol * amp.max():
        raise ResolutionError("spectral tail above tolerance; refine the box grid")


def sample_limit_solution(problem: LimitProblem, driver: BrownianDriver,
                          save_every: Optional[int] = None) -> LimitSample:
    """Exponential Euler-Maruyama path of ``v``.

    The forcing of step ``m`` is taken at ``t_{m+1}``; since the heat flow
    commutes with the forcing fields this reproduces the mild solution at the
    grid times exactly.
    """
    T = problem.T
    if abs(driver.n_steps * driver.dt - T) > 1e-12 * max(T, 1.0):
        raise ConfigurationError("Brownian grid does not cover the horizon")
    if driver.dt > T / 200 * (1 + 1e-12):
        raise ConfigurationError("time step must be at most T / 200")
    u0 = problem.u0
    _check_resolution(u0.hat0)
    n = u0.grid.n
    decay = problem.heat(driver.dt)
    vh = np.zeros_like(u0.hat0)
    save_every = driver.n_steps if save_every is None else save_every
    times, vals = [0.0], [np.zeros(n)]
    for m in range(driver.n_steps):
        t1 = (m + 1) * driver.dt
        vh = decay * vh
        if problem.A:
            vh = vh + problem.A * driver.increments[m] * u0.hat(t1, 2)
        if problem.H:
            vh = vh + problem.H * driver.dt * u0.hat(t1, 3)
        if (m + 1) % save_every == 0:
            times.append(t1)
            vals.append(np.fft.irfft(vh, n))
    return LimitSample(np.array(times), np.array(vals), driver.seed, driver.stream)


def drift_only_solution(problem: LimitProblem, t: float) -> np.ndarray:
    """Mean of ``v(t)``: the solution of ``v' = theta v'' + H u0'''``, ``v(0) = 0``."""
    return problem.H * t * problem.u0.evaluate(t, 3)


def _quadrature(T, n=48):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * T * (x + 1), 0.5 * T * w


def projection_moments(problem: LimitProblem, phi) -> tuple[float, float]:
    """Exact mean and variance of ``<v(T), phi>`` (Ito isometry with Gauss-Legendre in ``s``)."""
    grid = problem.grid
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (grid.n,):
        raise ConfigurationError("test function does not match the grid")
    ph = np.fft.rfft(phi)
    _check_resolution(ph)
    T = problem.T
    # <f, phi> from rfft coefficients (Parseval on the real grid)
    wts = np.full(len(ph), 2.0)
    wts[0] = 1.0
    if grid.n % 2 == 0:
        wts[-1] = 1.0

    def pair(fh):
        return float(np.sum(wts * (fh * np.conj(ph)).real) * grid.dx / grid.n)

    s, w = _quadrature(T)
    mean_int = sum(wi * pair(problem.heat(T - si) * problem.u0.hat(si, 3))
                   for si, wi in zip(s, w))
    var_int = sum(wi * pair(problem.heat(T - si) * problem.u0.hat(si, 2)) ** 2
                  for si, wi in zip(s, w))
    return problem.H * mean_int, problem.A ** 2 * var_int


def sample_projections(problem: LimitProblem, phis, n_samples: int, n_steps: int = 200,
                       seed: int = 0) -> np.ndarray:
    """``<v(T), phi_j>`` for ``n_samples`` independent Brownian paths; shape ``(M, J)``."""
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    out = np.empty((n_samples, len(phis)))
    T = problem.T
    u0 = problem.u0
    _check_resolution(u0.hat0)
    dt = T / n_steps
    decay = problem.heat(dt)
    # the forcing fields do not depend on the path; advance a block of paths at once
    h2 = [u0.hat((m + 1) * dt, 2) for m in range(n_steps)] if problem.A else None
    h3 = [u0.hat((m + 1) * dt, 3) for m in range(n_steps)] if problem.H else None
    block = 256
    for b0 in range(0, n_samples, block):
        ids = range(b0, min(n_samples, b0 + block))
        dW = np.array([BrownianDriver.sample(T, n_steps, seed, m).increments for m in ids])
        vh = np.zeros((len(dW), len(u0.hat0)), dtype=complex)
        for m in range(n_steps):
            vh *= decay
            if problem.A:
                vh += problem.A * dW[:, m, None] * h2[m]
            if problem.H:
                vh += problem.H * dt * h3[m]
        v = np.fft.irfft(vh, u0.grid.n, axis=1)
        out[b0:b0 + len(dW)] = v @ phis.T * problem.grid.dx
    return out


def expected_sq_norm(problem: LimitProblem) -> float:
    """``E ||v(T)||^2`` on the box: squared mean norm plus the integrated noise energy."""
    grid = problem.grid
    T = problem.T
    mean = drift_only_solution(problem, T)
    s, w = _quadrature(T)
    noise = sum(wi * grid.norm(np.fft.irfft(problem.heat(T - si) * problem.u0.hat(si, 2),
                                            grid.n)) ** 2 for si, wi in zip(s, w))
    return grid.norm(mean) ** 2 + problem.A ** 2 * noise
