"""Random environment: convolution kernel, Markov time driver and coefficient fields.

The coefficient ``Lambda(xi, eta, s)`` is realised as ``b_{m(s)}(xi, eta)`` where
``m`` is a stationary continuous-time Markov chain on ``K`` states and each
``b_k`` is a periodic field tabulated on the ``N x N`` torus pair grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ValidationError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


class KernelMoments(NamedTuple):
    M0: float
    M1: float
    M2: float
    M3: float
    first: np.ndarray
    second: np.ndarray
    third: np.ndarray


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Non-negative jump kernel ``a`` with compact support ``[lower, upper]``.

    Use the constructors :func:`uniform_kernel`, :func:`gaussian_kernel`,
    :func:`tabulated_kernel` and :func:`custom_kernel` rather than building
    this directly.  The density returned by :meth:`density` is normalised to
    unit mass; at the support endpoints it takes half of the one-sided limit
    so that lattice sums see the mean of the jump.
    """

    family: str
    lower: float
    upper: float
    sigma: Optional[float] = None
    nodes: Optional[tuple] = None
    values: Optional[tuple] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d: int = 1
    n_tab: int = 4097
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d != 1:
            raise ConfigurationError("only d = 1 kernels are implemented")
        if not self.upper > self.lower:
            raise ConfigurationError("kernel support must have positive length")
        object.__setattr__(self, "_mass", 1.0)
        mass = _quad(self._raw, self._breakpoints(), lambda z: np.ones_like(z))
        if not mass > 0:
            raise ValidationError("kernel has zero mass")
        object.__setattr__(self, "_mass", mass)

    @property
    def half_width(self) -> float:
        return max(abs(self.lower), abs(self.upper))

    def _raw(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "uniform":
            return np.ones_like(z)
        if self.family == "gaussian":
            return np.exp(-0.5 * (z / self.sigma) ** 2)
        if self.family == "custom":
            if self.func is not None:
                return np.asarray(self.func(z), dtype=float)
            return np.interp(z, self.nodes, self.values)
        raise ConfigurationError(f"unknown kernel family {self.family!r}")

    def _breakpoints(self):
        pts = [self.lower, self.upper]
        if self.nodes is not None:
            pts.extend(n for n in self.nodes if self.lower < n < self.upper)
        pts = np.unique(pts)
        # 64 panels between consecutive breakpoints keeps Gauss-Legendre exact
        # to rounding for every shipped family
        return np.unique(np.concatenate([np.linspace(a, b, 65) for a, b in zip(pts[:-1], pts[1:])]))

    def density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        inside = (z > self.lower) & (z < self.upper)
        out[inside] = self._raw(z[inside]) / self._mass
        edge = np.isclose(z, self.lower, rtol=0, atol=1e-13) | np.isclose(z, self.upper, rtol=0, atol=1e-13)
        if np.any(edge):
            zc = np.clip(z[edge], self.lower, self.upper)
            out[edge] = 0.5 * self._raw(zc) / self._mass
        return out

    __call__ = density

    def tabulation(self):
        """Symmetric tabulation grid used for the H1/H5 checks."""
        zmax = self.half_width
        z = np.linspace(-zmax, zmax, self.n_tab)
        return z, self.density(z)

    @property
    def is_even(self) -> bool:
        z, a = self.tabulation()
        return bool(np.max(np.abs(a - a[::-1])) <= 1e-12)

    @property
    def moments(self) -> KernelMoments:
        cached = self.__dict__.get("_moments")
        if cached is None:
            cached = kernel_moments(self)
            object.__setattr__(self, "_moments", cached)
        return cached

    def describe(self) -> dict:
        out = {"family": self.family, "lower": self.lower, "upper": self.upper}
        if self.sigma is not None:
            out["sigma"] = self.sigma
        out.update(self.params)
        return out


def _quad(f, breakpoints, g):
    total = 0.0
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        z = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.dot(_GL_WEIGHTS, f(z) * g(z))
    return float(total)


def uniform_kernel(half_width: float = 1.0) -> KernelSpec:
    return KernelSpec("uniform", -half_width, half_width, params={"half_width": half_width})


def gaussian_kernel(sigma: float = 0.3, cutoff: float = 6.0) -> KernelSpec:
    """Gaussian of standard deviation ``sigma`` truncated at ``cutoff * sigma``."""
    R = cutoff * sigma
    return KernelSpec("gaussian", -R, R, sigma=sigma, params={"cutoff": cutoff})


def tabulated_kernel(nodes: Sequence[float], values: Sequence[float]) -> KernelSpec:
    """Piecewise-linear kernel through ``(nodes, values)``, zero outside."""
    nodes = tuple(float(v) for v in nodes)
    values = tuple(float(v) for v in values)
    if len(nodes) != len(values) or len(nodes) < 2:
        raise ConfigurationError("tabulated kernel needs matching nodes/values")
    if np.any(np.diff(nodes) <= 0):
        raise ConfigurationError("tabulated kernel nodes must increase")
    if min(values) < 0:
        raise ValidationError("kernel values must be non-negative")
    return KernelSpec("custom", nodes[0], nodes[-1], nodes=nodes, values=values)


def custom_kernel(func: Callable, lower: float, upper: float) -> KernelSpec:
    return KernelSpec("custom", float(lower), float(upper), func=func)


def kernel_moments(kernel: KernelSpec) -> KernelMoments:
    """Moments of the normalised kernel by composite Gauss-Legendre quadrature.

    Returns the absolute moments ``M_k = int a |z|^k`` for k = 0..3 together
    with the signed first, second and third moment tensors (d = 1 shapes
    ``(1,)``, ``(1, 1)`` and ``(1, 1, 1)``).
    """
    _, tab = kernel.tabulation()
    if np.any(tab < 0):
        raise ValidationError("kernel takes negative values on its tabulation")
    bp = kernel._breakpoints()
    a = kernel.density

    def mom(g):
        return _quad(lambda z: kernel._raw(z) / kernel._mass, bp, g)

    M = [mom(lambda z, k=k: np.abs(z) ** k) for k in range(4)]
    s1 = mom(lambda z: z)
    s2 = mom(lambda z: z * z)
    s3 = mom(lambda z: z ** 3)
    del a
    return KernelMoments(
        M[0], M[1], M[2], M[3],
        np.array([s1]), np.array([[s2]]), np.array([[[s3]]]),
    )


# ---------------------------------------------------------------------------
# Markov driver
# ---------------------------------------------------------------------------


class MarkovDriver:
    """Finite-state continuous-time Markov chain with generator ``Q``.

    Attributes
    ----------
    Q : (K, K) ndarray
        Rate matrix, rows summing to zero.
    pi : (K,) ndarray
        Stationary distribution.
    gap : float
        Spectral gap (smallest non-zero ``-Re`` eigenvalue); ``inf`` for K = 1.
    mixing_constant : float
        ``C`` in ``rho(r) <= C exp(-gap r)``; the L2(pi) condition number of
        the eigenvector basis (1 for reversible chains).
    """

    def __init__(self, Q):
        Q = np.array(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ConfigurationError("generator must be a square matrix")
        K = Q.shape[0]
        scale = max(1.0, np.abs(Q).max())
        if np.any(np.abs(Q.sum(axis=1)) > 1e-12 * scale):
            raise ConfigurationError("generator rows must sum to zero")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ConfigurationError("generator off-diagonal rates must be non-negative")
        self.Q = Q
        self.Q.setflags(write=False)
        self.K = K
        self.pi = _stationary(Q)
        self.gap, self.mixing_constant = _gap_and_constant(Q, self.pi)

    @property
    def exit_rates(self):
        return -np.diag(self.Q)

    @property
    def mean_exit_rate(self) -> float:
        return float(self.pi @ self.exit_rates)

    @property
    def mixing_time(self) -> float:
        return 0.0 if not np.isfinite(self.gap) else 1.0 / self.gap

    def __repr__(self):
        return f"MarkovDriver(K={self.K}, gap={self.gap:.4g})"


def _stationary(Q):
    K = Q.shape[0]
    if K == 1:
        return np.ones(1)
    if np.linalg.matrix_rank(Q, tol=1e-10 * max(1.0, np.abs(Q).max())) != K - 1:
        raise ConfigurationError("generator is not irreducible (stationary law not unique)")
    A = np.vstack([Q.T, np.ones(K)])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    if np.any(pi <= 1e-14):
        raise ConfigurationError("generator is not irreducible (stationary law has zero mass)")
    pi = np.clip(pi, 0, None)
    return pi / pi.sum()


def _gap_and_constant(Q, pi):
    K = Q.shape[0]
    if K == 1:
        return np.inf, 0.0
    w, V = np.linalg.eig(Q)
    order = np.argsort(np.abs(w))
    w, V = w[order], V[:, order]
    gap = float(np.min(-w[1:].real))
    if not gap > 0:
        raise ConfigurationError("generator has no spectral gap")
    C = float(np.linalg.cond(np.sqrt(pi)[:, None] * V))
    return gap, C


# ---------------------------------------------------------------------------
# Driver paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DriverPath:
    """Piecewise-constant, right-continuous path of the driver on ``[0, horizon]``."""

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float
    seed: int = 0
    stream: int = 0

    def state_at(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < -1e-12) or np.any(s_arr > self.horizon * (1 + 1e-14) + 1e-12):
            raise DomainError(f"time outside path horizon [0, {self.horizon}]")
        idx = np.searchsorted(self.jump_times, s_arr, side="right")
        out = self.states[idx]
        return int(out) if out.ndim == 0 else out

    def jumps_between(self, s0: float, s1: float) -> np.ndarray:
        lo = np.searchsorted(self.jump_times, s0, side="right")
        hi = np.searchsorted(self.jump_times, s1, side="left")
        return self.jump_times[lo:hi]

    def occupation(self, K: int) -> np.ndarray:
        edges = np.concatenate([[0.0], self.jump_times, [self.horizon]])
        return np.bincount(self.states, weights=np.diff(edges), minlength=K) / self.horizon

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


def sample_path(driver: MarkovDriver, horizon: float, seed: int, stream: int = 0) -> DriverPath:
    """Exact simulation of the stationary chain on ``[0, horizon]``."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    rng = make_rng(seed, stream)
    K = driver.K
    state = int(rng.choice(K, p=driver.pi)) if K > 1 else 0
    if K == 1:
        return DriverPath(np.empty(0), np.zeros(1, dtype=np.int64), float(horizon), seed, stream)
    rates = driver.exit_rates
    jump_probs = driver.Q.copy()
    np.fill_diagonal(jump_probs, 0.0)
    jump_probs = jump_probs / rates[:, None]
    cum = np.cumsum(jump_probs, axis=1)
    times, states = [], [state]
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rates[state])
        if t > horizon:
            break
        state = int(np.searchsorted(cum[state], rng.random(), side="right"))
        state = min(state, K - 1)
        times.append(t)
        states.append(state)
    return DriverPath(np.array(times), np.array(states, dtype=np.int64), float(horizon), seed, stream)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


class EnvironmentModel:
    """Kernel + driver + per-state coefficient fields on the torus pair grid.

    Parameters
    ----------
    kernel : KernelSpec
    driver : MarkovDriver
    fields : (K, N, N) array_like
        ``fields[k, i, j] = b_k(xi_i, xi_j)`` with ``xi_i = i / N``.
    lam_min, lam_max : float, optional
        Declared bounds; default to the field extrema.
    """

    def __init__(self, kernel, driver, fields, lam_min=None, lam_max=None,
                 name="custom", coefficients=None):
        fields = np.array(fields, dtype=float)
        if fields.ndim != 3 or fields.shape[1] != fields.shape[2]:
            raise ConfigurationError("fields must have shape (K, N, N)")
        if fields.shape[0] != driver.K:
            raise ConfigurationError(
                f"{fields.shape[0]} coefficient fields for a {driver.K}-state driver")
        fields.setflags(write=False)
        self.kernel = kernel
        self.driver = driver
        self.fields = fields
        self.lam_min = float(fields.min() if lam_min is None else lam_min)
        self.lam_max = float(fields.max() if lam_max is None else lam_max)
        self.name = name
        self.coefficients = coefficients or {}

    @property
    def n_torus(self) -> int:
        return self.fields.shape[1]

    @property
    def K(self) -> int:
        return self.driver.K

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def fields_symmetric(self) -> bool:
        return bool(np.max(np.abs(self.fields - self.fields.transpose(0, 2, 1))) <= 1e-12)

    @property
    def symmetric(self) -> bool:
        return self.fields_symmetric and self.kernel.is_even

    def stable_step(self, safety: float = 0.9) -> float:
        """Explicit-Euler fast-time step ``safety / (2 Lambda+)``."""
        return safety / (2.0 * max(self.lam_max, float(self.fields.max())))

    def __repr__(self):
        return (f"EnvironmentModel({self.name!r}, K={self.K}, N={self.n_torus}, "
                f"symmetric={self.symmetric})")


def evaluate_lambda(env: EnvironmentModel, path: DriverPath, i: int, j: int, s: float) -> float:
    """``Lambda(xi_i, xi_j, s)`` read off the path state at time ``s``."""
    N = env.n_torus
    if not (0 <= i < N and 0 <= j < N):
        raise DomainError("torus index out of range")
    return float(env.fields[path.state_at(s), i, j])


HARMONIC_TERMS = ("alpha", "gamma", "delta", "zeta", "omega")


def harmonic_fields(n_torus, alpha, gamma, delta=None, zeta=None, omega=None):
    """Per-state fields built from low harmonics.

    ``b_k = 1 + alpha_k c(x)c(y) + gamma_k (c(x) + c(y)) + omega_k (s2(x) + s2(y))
    + delta_k s(x)c(y) + zeta_k s(x)`` with ``c = cos(2 pi .)``,
    ``s = sin(2 pi .)`` and ``s2 = sin(4 pi .)``.

    The ``omega`` term keeps the field symmetric but removes its reflection
    symmetry, so odd effective tensors need not vanish.  With an even kernel
    the ``delta`` term alone leaves the uniform density invariant; the
    ``zeta`` term makes the invariant density non-trivial.
    """
    xi = np.arange(n_torus) / n_torus
    c, s, s2 = np.cos(2 * np.pi * xi), np.sin(2 * np.pi * xi), np.sin(4 * np.pi * xi)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))

    def coef(v):
        v = np.zeros_like(alpha) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
        return v[:, None, None]

    return (1.0 + coef(alpha) * np.outer(c, c) + coef(gamma) * (c[:, None] + c[None, :])
            + coef(omega) * (s2[:, None] + s2[None, :])
            + coef(delta) * np.outer(s, c) + coef(zeta) * s[None, :, None])


DEFAULT_Q = [[-0.6, 0.4, 0.2],
             [0.3, -0.5, 0.2],
             [0.2, 0.3, -0.5]]


def harmonic_environment(kernel, Q, n_torus=16, name="harmonic", **terms):
    """Environment with :func:`harmonic_fields`.

    Declared bounds are the field extrema rounded outward to a multiple of 0.05.
    """
    unknown = set(terms) - set(HARMONIC_TERMS)
    if unknown:
        raise ConfigurationError(f"unknown field coefficients {sorted(unknown)}")
    K = np.asarray(Q).shape[0]
    vals = {t: np.broadcast_to(np.asarray(terms.get(t, 0.0), float), (K,)).copy()
            for t in HARMONIC_TERMS}
    fields = harmonic_fields(n_torus, **vals)
    lo = np.floor(fields.min() * 20 + 1e-9) / 20
    hi = np.ceil(fields.max() * 20 - 1e-9) / 20
    coeffs = {t: v.tolist() for t, v in vals.items()}
    return EnvironmentModel(kernel, MarkovDriver(Q), fields, lo, hi,
                            name=name, coefficients=coeffs)


def constant_environment(kernel=None, n_torus=16, value=1.0):
    kernel = uniform_kernel(1.0) if kernel is None else kernel
    fields = np.full((1, n_torus, n_torus), float(value))
    return EnvironmentModel(kernel, MarkovDriver([[0.0]]), fields, value, value,
                            name="constant", coefficients={"value": value})


def default_symmetric_environment(n_torus=16):
    return harmonic_environment(gaussian_kernel(0.3), DEFAULT_Q, n_torus=n_torus,
                                name="default_symmetric",
                                alpha=[0.4, -0.3, 0.0], gamma=[0.05, -0.1, 0.2])


def default_nonsymmetric_environment(n_torus=16):
    return harmonic_environment(gaussian_kernel(0.3), DEFAULT_Q, n_torus=n_torus,
                                name="default_nonsymmetric",
                                alpha=[0.3, -0.2, 0.0], gamma=[0.05, -0.1, 0.15],
                                delta=[0.1, 0.1, -0.1], zeta=[0.1, -0.1, 0.05])


def frozen_nonsymmetric_environment(n_torus=16):
    """Single-state (deterministic periodic) non-symmetric environment; H6 holds."""
    return harmonic_environment(gaussian_kernel(0.3), [[0.0]], n_torus=n_torus,
                                name="frozen_nonsymmetric", alpha=0.2, gamma=0.05,
                                delta=0.2, zeta=0.15)


def scalar_toy_environment(levels=(0.6, 1.4), Q=((-1.0, 1.0), (1.0, -1.0)), n_torus=8,
                           kernel=None):
    """Spatially constant coefficient ``Lambda = c_{m(s)}``; correctors vanish."""
    kernel = uniform_kernel(1.0) if kernel is None else kernel
    levels = np.asarray(levels, dtype=float)
    fields = levels[:, None, None] * np.ones((len(levels), n_torus, n_torus))
    return EnvironmentModel(kernel, MarkovDriver(Q), fields, levels.min(), levels.max(),
                            name="scalar_toy", coefficients={"levels": levels.tolist()})


def shipped_environments(n_torus=16):
    return {
        "constant": constant_environment(n_torus=n_torus),
        "default_symmetric": default_symmetric_environment(n_torus),
        "default_nonsymmetric": default_nonsymmetric_environment(n_torus),
        "frozen_nonsymmetric": frozen_nonsymmetric_environment(n_torus),
        "scalar_toy": scalar_toy_environment(n_torus=8),
    }


def gaussian_bump(x):
    """Default initial datum ``exp(-x^2 / 2)``."""
    return np.exp(-0.5 * np.asarray(x, dtype=float) ** 2)


# ---------------------------------------------------------------------------
# Hypotheses
# ---------------------------------------------------------------------------


@dataclass
class HypothesisCheck:
    status: str  # "pass" | "fail" | "deferred"
    detail: dict


@dataclass
class HypothesisReport:
    checks: dict

    def passed(self, name: str) -> bool:
        return self.checks[name].status == "pass"

    def status(self, name: str) -> str:
        return self.checks[name].status

    def to_dict(self) -> dict:
        return {k: {"status": v.status, **v.detail} for k, v in self.checks.items()}

    def format(self) -> str:
        lines = []
        for name, chk in self.checks.items():
            lines.append(f"[{name}] status = {chk.status}")
            for key, val in chk.detail.items():
                lines.append(f"[{name}] {key} = {val}")
        return "\n".join(lines)


def validate_hypotheses(env: EnvironmentModel, initial: Optional[Callable] = None) -> HypothesisReport:
    """Check H1-H5 for ``env``; H6 is left to :func:`nlhomog.corrector.compute_beta`."""
    checks = {}

    kern = env.kernel
    z, tab = kern.tabulation()
    negative = bool(np.any(tab < 0))
    detail = {"min_value": float(tab.min())}
    if negative:
        checks["H1"] = HypothesisCheck("fail", {**detail, "reason": "negative kernel values"})
    else:
        m = kern.moments
        ok = abs(m.M0 - 1.0) <= 1e-10 and np.isfinite(m.M3)
        checks["H1"] = HypothesisCheck("pass" if ok else "fail",
                                       {**detail, "M0": m.M0, "M1": m.M1, "M2": m.M2, "M3": m.M3})

    f = env.fields
    k, i, j = np.unravel_index(np.argmin(f), f.shape)
    kmax, imax, jmax = np.unravel_index(np.argmax(f), f.shape)
    detail = {"lambda_minus": env.lam_min, "lambda_plus": env.lam_max,
              "field_min": float(f.min()), "field_max": float(f.max())}
    problems = []
    if not env.lam_min > 0:
        problems.append("lambda_minus not positive")
    if f.min() < env.lam_min - 1e-12 or not f.min() > 0:
        problems.append(f"lower bound violated at state {k}, pair ({i}, {j})")
        detail["offending_pair"] = [int(k), int(i), int(j)]
    if f.max() > env.lam_max + 1e-12:
        problems.append(f"upper bound violated at state {kmax}, pair ({imax}, {jmax})")
        detail.setdefault("offending_pair", [int(kmax), int(imax), int(jmax)])
    if problems:
        detail["reason"] = "; ".join(problems)
    checks["H2"] = HypothesisCheck("fail" if problems else "pass", detail)

    drv = env.driver
    if drv.K == 1:
        checks["H3"] = HypothesisCheck("pass", {"spectral_gap": "inf", "mixing_integral_bound": 0.0})
    else:
        bound = drv.mixing_constant / drv.gap
        checks["H3"] = HypothesisCheck("pass" if drv.gap > 0 and np.isfinite(bound) else "fail",
                                       {"spectral_gap": drv.gap,
                                        "mixing_constant": drv.mixing_constant,
                                        "mixing_integral_bound": bound})

    ini = gaussian_bump if initial is None else initial
    x = np.linspace(10.0, 20.0, 201)
    decay = float(np.max(np.abs(x ** 8 * np.asarray(ini(x)))) + np.max(np.abs(x ** 8 * np.asarray(ini(-x)))))
    checks["H4"] = HypothesisCheck("pass" if decay < 1e-6 else "fail",
                                   {"tail_weighted_sup": decay,
                                    "initial_datum": getattr(ini, "__name__", "custom")})

    checks["H5"] = HypothesisCheck("pass" if env.symmetric else "fail",
                                   {"kernel_even": kern.is_even,
                                    "fields_symmetric": env.fields_symmetric})
    checks["H6"] = HypothesisCheck("deferred", {"note": "checked by compute_beta"})
    return HypothesisReport(checks)
