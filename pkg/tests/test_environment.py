import numpy as np
import pytest

from nlhomog.environment import (DEFAULT_Q, MarkovDriver, constant_environment, custom_kernel,
                                 default_nonsymmetric_environment, default_symmetric_environment,
                                 gaussian_kernel, harmonic_environment, make_rng, sample_path,
                                 scalar_toy_environment, shipped_environments, tabulated_kernel,
                                 uniform_kernel, validate_hypotheses, EnvironmentModel)
from nlhomog.errors import ConfigurationError, DomainError, ValidationError

from .oracle_values import DEFAULT_MIXING_BOUND, EXP_KERNEL_M1


def test_uniform_kernel_moments_closed_form():
    m = uniform_kernel(1.0).moments
    assert m.M0 == pytest.approx(1.0, abs=1e-14)
    assert m.M1 == pytest.approx(0.5, abs=1e-14)
    assert m.first[0] == pytest.approx(0.0, abs=1e-14)
    assert m.second[0, 0] == pytest.approx(1 / 3, abs=1e-14)
    assert m.M3 == pytest.approx(0.25, abs=1e-14)


def test_gaussian_kernel_mass_and_variance():
    k = gaussian_kernel(0.3)
    m = k.moments
    assert m.M0 == pytest.approx(1.0, abs=1e-12)
    # truncation at 6 sigma removes a relative 1e-8 of the variance at most
    assert m.second[0, 0] == pytest.approx(0.09, rel=1e-7)
    assert k.is_even


def test_exponential_kernel_first_moment_matches_quadrature_oracle():
    k = custom_kernel(lambda z: np.exp(-z), 0.0, 5.0)
    m = k.moments
    assert m.M0 == pytest.approx(1.0, abs=1e-12)
    assert m.first[0] == pytest.approx(EXP_KERNEL_M1, abs=1e-10)
    assert not k.is_even


def test_tabulated_kernel_rejects_zero_mass():
    with pytest.raises(ValidationError):
        tabulated_kernel([-1.0, 0.0, 1.0], [0.0, 0.0, 0.0])


def test_driver_stationary_law_and_gap():
    drv = MarkovDriver(DEFAULT_Q)
    assert drv.pi.sum() == pytest.approx(1.0)
    assert np.allclose(drv.pi @ np.asarray(DEFAULT_Q), 0.0, atol=1e-14)
    assert drv.gap > 0
    assert drv.mixing_constant / drv.gap == pytest.approx(DEFAULT_MIXING_BOUND, rel=1e-8)


@pytest.mark.parametrize("Q", [[[-1.0, 1.0], [0.0, 0.0]], [[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0],
                                                            [0.0, 0.0, 0.0]]])
def test_reducible_generators_rejected(Q):
    with pytest.raises(ConfigurationError):
        MarkovDriver(Q)


def test_path_occupation_converges_to_stationary_law():
    drv = MarkovDriver(DEFAULT_Q)
    path = sample_path(drv, 20000.0, seed=3)
    assert np.allclose(path.occupation(3), drv.pi, atol=0.02)
    assert path.state_at(0.0) == path.states[0]
    with pytest.raises(DomainError):
        path.state_at(20001.0)


def test_paths_are_reproducible_and_streams_independent():
    drv = MarkovDriver(DEFAULT_Q)
    a = sample_path(drv, 100.0, seed=5, stream=2)
    b = sample_path(drv, 100.0, seed=5, stream=2)
    c = sample_path(drv, 100.0, seed=5, stream=3)
    assert np.array_equal(a.jump_times, b.jump_times)
    assert not np.array_equal(a.jump_times[:5], c.jump_times[:5])
    assert make_rng(1, 0).random() == make_rng(1, 0).random()


def test_shipped_environments_satisfy_bounds():
    for name, env in shipped_environments().items():
        rep = validate_hypotheses(env)
        assert rep.passed("H1"), name
        assert rep.passed("H2"), name
        assert rep.passed("H3"), name
        assert rep.passed("H4"), name
        assert rep.status("H6") == "deferred"


def test_symmetry_detection():
    assert default_symmetric_environment().symmetric
    assert not default_nonsymmetric_environment().symmetric
    assert not validate_hypotheses(default_nonsymmetric_environment()).passed("H5")


def test_h2_reports_offending_pair():
    env = constant_environment(value=1.0)
    fields = env.fields.copy()
    fields[0, 2, 5] = -0.1
    bad = EnvironmentModel(env.kernel, env.driver, fields, 0.5, 1.0, name="bad")
    rep = validate_hypotheses(bad)
    assert rep.status("H2") == "fail"
    assert rep.checks["H2"].detail["offending_pair"] == [0, 2, 5]


def test_h4_flags_heavy_tailed_initial_datum():
    rep = validate_hypotheses(constant_environment(), initial=lambda x: 1.0 / (1 + x ** 2))
    assert rep.status("H4") == "fail"


def test_harmonic_environment_rejects_unknown_terms():
    with pytest.raises(ConfigurationError):
        harmonic_environment(uniform_kernel(), DEFAULT_Q, eta=[0.1, 0.1, 0.1])


def test_scalar_toy_fields_are_constant_per_state():
    env = scalar_toy_environment()
    assert np.allclose(env.fields[0], 0.6) and np.allclose(env.fields[1], 1.4)
