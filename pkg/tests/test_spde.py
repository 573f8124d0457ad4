import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nlhomog.errors import ConfigurationError, DomainError
from nlhomog.environment import gaussian_bump
from nlhomog.fullscale import SpectralBox, gaussian_test_functions, solve_homogenized
from nlhomog.spde import (BrownianDriver, LimitProblem, drift_only_solution, expected_sq_norm,
                          projection_moments, sample_limit_solution, sample_projections)

THETA, A, H, T = 0.05, 0.02, 0.003, 0.5


@pytest.fixture(scope="module")
def problem():
    grid = SpectralBox(8.0, 256)
    u0 = solve_homogenized(THETA, gaussian_bump, T, grid)
    return LimitProblem(THETA, A, H, u0, T)


def _gauss_derivs(x, t):
    # closed-form derivatives of the heat solution started from exp(-x^2/2)
    a = 1 + 2 * THETA * t
    u = np.exp(-x ** 2 / (2 * a)) / np.sqrt(a)
    d2 = (x ** 2 / a ** 2 - 1 / a) * u
    d3 = (3 * x / a ** 2 - x ** 3 / a ** 3) * u
    return d2, d3


def test_problem_validation(problem):
    with pytest.raises(DomainError):
        LimitProblem(THETA, -1.0, H, problem.u0, T)
    with pytest.raises(DomainError):
        LimitProblem(0.0, A, H, problem.u0, T)
    with pytest.raises(ConfigurationError):
        LimitProblem(2 * THETA, A, H, problem.u0, T)
    with pytest.raises(ConfigurationError):
        LimitProblem([THETA, THETA], A, H, problem.u0, T)


def test_heat_factors_form_a_semigroup(problem):
    assert np.allclose(problem.heat(0.1) * problem.heat(0.2), problem.heat(0.3), rtol=1e-14)
    assert np.allclose(problem.heat(0.2) * problem.u0.hat(0.1, 2), problem.u0.hat(0.3, 2),
                       atol=1e-12)


def test_drift_matches_per_mode_ode(problem):
    u0 = problem.u0
    v = drift_only_solution(problem, T)
    vh = np.fft.rfft(v)
    for j in (1, 5, 12, 30):
        k = u0.k[j]
        c = u0.hat0[j]

        def rhs(t, y):
            z = y[0] + 1j * y[1]
            dz = -THETA * k * k * z + H * (1j * k) ** 3 * c * np.exp(-THETA * k * k * t)
            return [dz.real, dz.imag]

        sol = solve_ivp(rhs, (0, T), [0.0, 0.0], rtol=1e-11, atol=1e-13 * abs(c) + 1e-300)
        ref = sol.y[0, -1] + 1j * sol.y[1, -1]
        assert abs(vh[j] - ref) <= 1e-8 * max(1.0, abs(ref))


def test_noise_free_path_equals_drift(problem):
    quiet = LimitProblem(THETA, 0.0, H, problem.u0, T)
    drv = BrownianDriver.sample(T, 200, seed=0)
    path = sample_limit_solution(quiet, drv, save_every=50)
    assert len(path.times) == 5
    assert np.allclose(path.values[-1], drift_only_solution(quiet, T), atol=1e-13)


def test_path_is_scaled_brownian_times_profile(problem):
    drv = BrownianDriver.sample(T, 400, seed=3)
    v = sample_limit_solution(problem, drv).values[-1]
    expected = A * drv.W[-1] * problem.u0.evaluate(T, 2) + drift_only_solution(problem, T)
    assert np.allclose(v, expected, atol=1e-13)


def test_driver_contract():
    drv = BrownianDriver.sample(1.0, 200, seed=1, stream=2)
    assert drv.W[0] == 0.0 and len(drv.W) == 201
    assert np.array_equal(drv.increments, BrownianDriver.sample(1.0, 200, 1, 2).increments)


def test_coarse_driver_rejected(problem):
    with pytest.raises(ConfigurationError):
        sample_limit_solution(problem, BrownianDriver.sample(T, 100, seed=0))
    with pytest.raises(ConfigurationError):
        sample_limit_solution(problem, BrownianDriver.sample(2 * T, 400, seed=0))


def test_projection_moments_match_closed_form(problem):
    grid = problem.grid
    phis = gaussian_test_functions(grid, [(0.0, 0.5), (0.7, 0.8), (-1.0, 1.2)])
    d2, d3 = _gauss_derivs(grid.x, T)
    for phi in phis:
        mean, var = projection_moments(problem, phi)
        assert mean == pytest.approx(H * T * grid.inner(d3, phi), rel=1e-9, abs=1e-15)
        assert var == pytest.approx(A ** 2 * T * grid.inner(d2, phi) ** 2, rel=1e-9)


def test_expected_sq_norm_closed_form(problem):
    grid = problem.grid
    d2, d3 = _gauss_derivs(grid.x, T)
    expected = (H * T) ** 2 * grid.inner(d3, d3) + A ** 2 * T * grid.inner(d2, d2)
    assert expected_sq_norm(problem) == pytest.approx(expected, rel=1e-9)


def test_monte_carlo_agrees_with_isometry(problem):
    phis = gaussian_test_functions(problem.grid, [(0.0, 0.5), (0.7, 0.8)])
    S = sample_projections(problem, phis, 1000, seed=5)
    for j, phi in enumerate(phis):
        mean, var = projection_moments(problem, phi)
        assert abs(S[:, j].mean() - mean) <= 4 * np.sqrt(var / 1000)
        assert S[:, j].var(ddof=1) / var == pytest.approx(1.0, abs=0.15)


def test_vectorized_sampler_matches_single_paths(problem):
    phis = gaussian_test_functions(problem.grid, [(0.0, 0.5)])
    S = sample_projections(problem, phis, 3, seed=9)
    for m in range(3):
        v = sample_limit_solution(problem, BrownianDriver.sample(T, 200, 9, m)).values[-1]
        assert S[m, 0] == pytest.approx(problem.grid.inner(v, phis[0]), rel=1e-10, abs=1e-16)
