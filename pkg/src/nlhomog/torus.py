"""Discrete nonlocal generator on the unit torus and its rescaled physical-grid form.

Jumps are restricted to the lattice ``z_o = o / N`` so that ``x / eps`` of every
physical node lands on a torus node.  Lattice weights ``w_o`` are the kernel
samples ``a(z_o) / N`` (mean of one-sided limits at a jump), adjusted by a
quadratic tilt when needed so that the discrete moments of order 0, 1 and 2
equal the exact ones.  All torus quantities are built from the periodised
moment tables

    a_k(zeta_j) = sum_{o = j mod N} w_o z_o^k / dxi,

which replace minimal-image displacements and stay correct for kernels wider
than one period.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .environment import DriverPath, EnvironmentModel, KernelSpec
from .errors import ConfigurationError, DomainError, ResolutionError


@dataclass(frozen=True)
class TorusGrid:
    n: int
    d: int = 1

    def __post_init__(self):
        if self.d != 1:
            raise ConfigurationError("only d = 1 torus grids are implemented")
        if self.n < 2:
            raise ConfigurationError("torus grid needs at least two points")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    @property
    def dxi(self) -> float:
        return 1.0 / self.n ** self.d

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, self.dxi)


@dataclass(frozen=True, eq=False)
class PeriodizedKernel:
    """Kernel restricted to the lattice and folded onto the torus.

    Attributes
    ----------
    values : (N,) ndarray
        Plain lattice periodisation ``sum_m a(zeta_j + m)``.
    tables : (4, N) ndarray
        Moment-matched tables ``a_k(zeta_j)``, k = 0..3, used by the generator.
    offsets, displacements, weights : (n_off,) ndarray
        Lattice offsets ``o``, jumps ``z_o = o / N`` and weights ``w_o``.
    tilt : (3,) ndarray
        Coefficients ``c`` of the factor ``c0 + c1 z + c2 z^2`` applied to
        the raw samples (``(1, 0, 0)`` when no adjustment was needed).
    n_shifts : int
        Number of non-zero period translates that contribute.
    """

    n: int
    values: np.ndarray
    tables: np.ndarray
    offsets: np.ndarray
    displacements: np.ndarray
    weights: np.ndarray
    tilt: np.ndarray
    n_shifts: int
    tol: float
    tail_mass: float

    @property
    def dxi(self) -> float:
        return 1.0 / self.n

    def moment(self, k: int) -> float:
        """Discrete moment ``sum_o w_o z_o^k``."""
        return float(np.sum(self.weights * self.displacements ** k))


def _lattice(kernel: KernelSpec, n: int):
    o_lo = int(np.floor(kernel.lower * n + 1e-9))
    o_hi = int(np.ceil(kernel.upper * n - 1e-9))
    lim = max(-o_lo, o_hi)
    offsets = np.arange(-lim, lim + 1)
    z = offsets / n
    return offsets, z, kernel.density(z) / n


def periodize_kernel(kernel: KernelSpec, grid: TorusGrid, tol: float = 1e-12,
                     max_shifts: int = 64) -> PeriodizedKernel:
    """Fold the lattice-restricted kernel onto the torus grid.

    Raises
    ------
    ResolutionError
        If the support needs more than ``max_shifts`` period translates.
    """
    n = grid.n
    if kernel.half_width > max_shifts:
        raise ResolutionError(
            f"kernel support {kernel.half_width} needs more than {max_shifts} period shifts")
    offsets, z, raw = _lattice(kernel, n)
    m = kernel.moments
    if kernel.is_even:
        raw = 0.5 * (raw + raw[::-1])
    exact = np.array([m.M0, m.first[0], m.second[0, 0]])
    disc = np.array([np.sum(raw * z ** k) for k in range(3)])
    tilt = np.array([1.0, 0.0, 0.0])
    if np.max(np.abs(disc - exact)) > 1e-14:
        G = np.array([[np.sum(raw * z ** (i + j)) for j in range(3)] for i in range(3)])
        if np.linalg.cond(G) < 1e12:
            tilt = np.linalg.solve(G, exact)
        w = raw * (tilt[0] + tilt[1] * z + tilt[2] * z ** 2)
        if np.linalg.cond(G) >= 1e12 or np.any(w < 0):
            # fall back to mass normalisation only
            tilt = np.array([m.M0 / raw.sum(), 0.0, 0.0])
    w = raw * (tilt[0] + tilt[1] * z + tilt[2] * z ** 2)
    if kernel.is_even:
        w = 0.5 * (w + w[::-1])
    res = np.mod(offsets, n)
    tables = np.zeros((4, n))
    for k in range(4):
        np.add.at(tables[k], res, w * z ** k * n)
    values = np.zeros(n)
    np.add.at(values, res, kernel.density(z))
    # translates relative to the centred fundamental cell [-1/2, 1/2)
    shifts = np.floor(z + 0.5 + 1e-12).astype(int)
    n_shifts = int(len(np.unique(shifts[(raw > 0) & (shifts != 0)])))
    return PeriodizedKernel(n, values, tables, offsets, z, w, tilt, n_shifts, tol, 0.0)


class GeneratorMatrix:
    """Per-state dense matrices of the torus generator.

    ``(L_k phi)_i = sum_j W[k, i, j] (phi_j - phi_i)`` and the first-, second-
    and third-moment companions ``Z1, Z2, Z3`` (same construction with the
    tables ``a_1, a_2, a_3``).  Row sums are cached as ``D`` and ``rZ1..rZ3``.
    """

    def __init__(self, env: EnvironmentModel, grid: TorusGrid, pk: PeriodizedKernel):
        N = grid.n
        dxi = grid.dxi
        diff = np.mod(np.arange(N)[:, None] - np.arange(N)[None, :], N)
        f = env.fields
        self.grid = grid
        self.kernel = pk
        self.env = env
        self.W = np.ascontiguousarray(dxi * pk.tables[0][diff][None] * f)
        self.Z1 = np.ascontiguousarray(dxi * pk.tables[1][diff][None] * f)
        self.Z2 = np.ascontiguousarray(dxi * pk.tables[2][diff][None] * f)
        self.Z3 = np.ascontiguousarray(dxi * pk.tables[3][diff][None] * f)
        self.D = self.W.sum(axis=2)
        self.rZ1 = self.Z1.sum(axis=2)
        self.rZ2 = self.Z2.sum(axis=2)
        self.rZ3 = self.Z3.sum(axis=2)
        for arr in (self.W, self.Z1, self.Z2, self.Z3, self.D, self.rZ1, self.rZ2, self.rZ3):
            arr.setflags(write=False)

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dxi(self) -> float:
        return self.grid.dxi

    def dense(self, k: int) -> np.ndarray:
        """Matrix of ``L_k`` acting on column vectors."""
        return self.W[k] - np.diag(self.D[k])

    def apply(self, k: int, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        return self.W[k] @ phi - self.D[k] * phi if phi.ndim == 1 else self.dense(k) @ phi

    def adjoint_apply(self, k: int, p) -> np.ndarray:
        """``(L*_k p)_i = sum_j W[k, j, i] p_j - D[k, i] p_i``."""
        p = np.asarray(p, dtype=float)
        return self.W[k].T @ p - self.D[k] * p

    def operator_bound(self) -> float:
        return float(max(self.D.max(axis=1).max(), self.W.sum(axis=1).max()))

    def stable_step(self, safety: float = 0.9) -> float:
        return safety / (2.0 * self.env.lam_max)


def assemble_generator(env: EnvironmentModel, grid: TorusGrid | None = None,
                       tol: float = 1e-12) -> GeneratorMatrix:
    grid = TorusGrid(env.n_torus) if grid is None else grid
    if grid.n != env.n_torus:
        raise ConfigurationError(
            f"torus grid has {grid.n} points but the fields are tabulated on {env.n_torus}")
    return GeneratorMatrix(env, grid, periodize_kernel(env.kernel, grid, tol))


# ---------------------------------------------------------------------------
# Physical grid and rescaled operator
# ---------------------------------------------------------------------------


class PhysicalGrid:
    """Periodic box ``[-B, B)`` with spacing ``eps / N`` (``B`` a multiple of ``eps``)."""

    def __init__(self, eps: float, n_torus: int, half_width: float):
        if not eps > 0:
            raise DomainError("eps must be positive")
        cells = half_width / eps
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ConfigurationError(
                f"box half-width {half_width} is not a multiple of eps = {eps}")
        self.eps = float(eps)
        self.n_torus = int(n_torus)
        self.periods = int(round(cells))
        self.half_width = self.periods * self.eps
        self.dx = self.eps / self.n_torus
        self.n = 2 * self.periods * self.n_torus
        self.x = -self.half_width + self.dx * np.arange(self.n)
        self.x.setflags(write=False)
        self.periodic = True

    @classmethod
    def covering(cls, eps: float, n_torus: int, min_half_width: float) -> "PhysicalGrid":
        return cls(eps, n_torus, np.ceil(min_half_width / eps - 1e-9) * eps)

    @property
    def residues(self) -> np.ndarray:
        """Torus index of ``x_i / eps mod 1``."""
        return np.arange(self.n) % self.n_torus

    def inner(self, f, g) -> float:
        return float(np.dot(f, g) * self.dx)

    def norm(self, f) -> float:
        return float(np.sqrt(np.dot(f, f) * self.dx))

    def describe(self) -> dict:
        return {"eps": self.eps, "n_torus": self.n_torus, "half_width": self.half_width,
                "dx": self.dx, "n_nodes": self.n}


class RescaledOperator:
    """Banded form of ``eps^2 L^eps`` on a :class:`PhysicalGrid`.

    ``coef[k, r, q] = w_{o_q} b_k(r, r - o_q)`` for torus residue ``r``; the
    physical operator is ``eps^-2`` times the banded stencil.
    """

    def __init__(self, gen: GeneratorMatrix):
        pk = gen.kernel
        N = gen.n
        r = np.arange(N)[:, None]
        col = np.mod(r - pk.offsets[None, :], N)
        f = gen.env.fields
        self.coef = np.ascontiguousarray(pk.weights[None, None, :] * f[:, r, col])
        self.offsets = np.ascontiguousarray(pk.offsets.astype(np.int64))
        self.n_torus = N
        self.bandwidth = int(np.max(np.abs(pk.offsets)))

    def check_grid(self, grid: PhysicalGrid):
        if grid.n_torus != self.n_torus:
            raise ConfigurationError("physical grid is not commensurate with the torus grid")
        if grid.n <= 2 * self.bandwidth:
            raise ConfigurationError("physical box narrower than the kernel stencil")

    def apply(self, k: int, u, eps: float) -> np.ndarray:
        u = np.ascontiguousarray(u, dtype=float)
        out = np.empty_like(u)
        _kernels.banded_apply(self.coef[k], self.offsets, u, out)
        return out / eps ** 2

    def step(self, k: int, u, tau: float, out=None) -> np.ndarray:
        """Explicit Euler step of fast length ``tau`` (slow length ``eps^2 tau``)."""
        out = np.empty_like(u) if out is None else out
        _kernels.banded_step(self.coef[k], self.offsets, u, tau, out)
        return out


def rescaled_apply(env: EnvironmentModel, path: DriverPath, u, grid: PhysicalGrid,
                   eps: float, t: float, s_offset: float = 0.0,
                   op: RescaledOperator | None = None) -> np.ndarray:
    """``(L^eps_t u)(x_i)`` with the driver state read at fast time ``s_offset + t / eps^2``."""
    if abs(grid.eps - eps) > 1e-14 * eps:
        raise ConfigurationError("grid spacing is not eps / N (fast variable would alias)")
    op = RescaledOperator(assemble_generator(env)) if op is None else op
    op.check_grid(grid)
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n,):
        raise ConfigurationError("field does not match the physical grid")
    k = path.state_at(s_offset + t / eps ** 2)
    return op.apply(k, u, eps)
