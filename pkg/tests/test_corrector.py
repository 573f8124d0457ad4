import numpy as np
import pytest

from nlhomog.corrector import (InvariantDensity, build_schedule, compute_beta, corrector_residual, corrector_rhs,
                               estimate_decay_rate, solve_cell_problems, solve_invariant_density,
                               solve_stationary_corrector, uniform_density)
from nlhomog.effective import fast_step
from nlhomog.environment import (default_nonsymmetric_environment, default_symmetric_environment,
                                 frozen_nonsymmetric_environment, sample_path)
from nlhomog.errors import ConfigurationError, DomainError, SolvabilityError
from nlhomog.torus import assemble_generator

from .oracle_values import FROZEN_BETA, FROZEN_CHI1, FROZEN_P


@pytest.fixture(scope="module")
def frozen():
    env = frozen_nonsymmetric_environment()
    gen = assemble_generator(env)
    ds = fast_step(env)
    path = sample_path(env.driver, 300.0, 0)
    sch = build_schedule(path, 0.0, 300.0, ds)
    p = solve_invariant_density(gen, sch, s_pburn=150.0)
    return env, gen, sch, p


def test_schedule_refines_at_jumps():
    env = default_symmetric_environment()
    path = sample_path(env.driver, 50.0, 2)
    sch = build_schedule(path, 0.0, 50.0, 0.25)
    assert sch.n_cells == 200
    assert sch.taus.sum() == pytest.approx(50.0)
    assert np.all(sch.taus > 0)
    mids = sch.starts + 0.5 * sch.taus
    assert np.array_equal(path.state_at(mids), sch.states)
    assert sch.starts[sch.grid_steps[:-1]] == pytest.approx(0.25 * np.arange(200))
    assert sch.step_at(10.0) == sch.grid_steps[40]
    sub = sch.slice(40, 80)
    assert sub.s0 == pytest.approx(10.0) and sub.end == pytest.approx(20.0)


def test_schedule_rejects_misaligned_window():
    env = default_symmetric_environment()
    path = sample_path(env.driver, 10.0, 0)
    with pytest.raises(ConfigurationError):
        build_schedule(path, 0.0, 10.1, 0.25)
    with pytest.raises(ConfigurationError):
        build_schedule(path, 0.0, 20.0, 0.25)


def test_step_bound_enforced():
    env = default_symmetric_environment()
    gen = assemble_generator(env)
    sch = build_schedule(sample_path(env.driver, 10.0, 0), 0.0, 10.0, 1.0)
    with pytest.raises(ConfigurationError):
        solve_invariant_density(gen, sch)


def test_frozen_density_matches_null_space_oracle(frozen):
    _, gen, sch, p = frozen
    stop = sch.step_at(p.valid_until)
    vals = p.values[:stop + 1]
    assert np.allclose(vals.sum(axis=1) * gen.dxi, 1.0, atol=1e-13)
    assert vals.min() > 0
    assert np.max(np.abs(vals[0] - FROZEN_P)) <= 1e-8
    assert np.max(np.abs(vals[stop] - FROZEN_P)) <= 1e-8


def test_frozen_drift_matches_oracle(frozen):
    _, gen, sch, p = frozen
    drift = compute_beta(gen, sch, p)
    assert drift.deterministic
    assert drift.mean == pytest.approx(FROZEN_BETA, abs=1e-9)


def test_frozen_static_corrector_matches_least_squares_oracle(frozen):
    _, gen, sch, p = frozen
    drift = compute_beta(gen, sch, p)
    rhs = corrector_rhs("g_plus_beta", gen, sch, p=p, beta=drift.beta)
    chi = solve_stationary_corrector(gen, sch, rhs, p=p)
    stop = sch.step_at(p.valid_until)
    assert np.max(np.abs(chi.values[stop] - FROZEN_CHI1)) <= 1e-8
    assert corrector_residual(gen, chi, rhs) <= 1e-10


def test_unbalanced_rhs_violates_solvability(frozen):
    _, gen, sch, p = frozen
    with pytest.raises(SolvabilityError):
        corrector_rhs("g", gen, sch, p=p)


def test_rhs_dependencies_checked(frozen):
    _, gen, sch, p = frozen
    with pytest.raises(ConfigurationError):
        corrector_rhs("h_minus_theta", gen, sch, p=p)
    with pytest.raises(ConfigurationError):
        corrector_rhs("nonsense", gen, sch)


def test_uniform_density_is_invariant_in_symmetric_case():
    env = default_symmetric_environment()
    gen = assemble_generator(env)
    sch = build_schedule(sample_path(env.driver, 40.0, 1), 0.0, 40.0, fast_step(env))
    p = solve_invariant_density(gen, sch)
    assert np.allclose(p.values, uniform_density(gen, sch).values, atol=1e-12)


def test_decay_pilot_fits_exponential():
    env = default_symmetric_environment()
    gen = assemble_generator(env)
    est = estimate_decay_rate(gen, sample_path(env.driver, 400.0, 0), fast_step(env))
    assert est.gamma0 > 0
    assert est.r2 >= 0.95
    assert est.s_burn == pytest.approx(20 / est.gamma0, abs=fast_step(env))


def test_fused_sweep_agrees_with_generic_solver():
    env = default_nonsymmetric_environment()
    gen = assemble_generator(env)
    ds = fast_step(env)
    sch_full = build_schedule(sample_path(env.driver, 200.0, 4), 0.0, 200.0, ds)
    p_full = solve_invariant_density(gen, sch_full, 100.0)
    sch = sch_full.slice(0, 400)
    p = InvariantDensity(sch, p_full.values[:sch.n + 1], sch.end)
    sol = solve_cell_problems(gen, sch, p=p, use_beta=True, save_steps=[sch.n])
    drift = compute_beta(gen, sch, p)
    rhs = corrector_rhs("g_plus_beta", gen, sch, p=p, beta=drift.beta)
    chi = solve_stationary_corrector(gen, sch, rhs, p=p)
    assert np.allclose(sol.final_chi1, chi.values[-1], atol=1e-12)
    assert np.allclose(sol.beta, drift.beta, atol=1e-14)
    # p-weighted mean of chi1 is zero after every step
    means = np.einsum("ni,ni->n", chi.values[1:], p.values[1:]) * gen.dxi
    assert np.abs(means).max() <= 1e-12
    c1, _, _ = sol.snapshot(sch.n)
    assert np.array_equal(c1, sol.final_chi1)
    with pytest.raises(DomainError):
        sol.snapshot(3)
