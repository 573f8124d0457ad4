import json

import numpy as np
import pytest

from nlhomog.errors import DomainError, ValidationError
from nlhomog.verify import (CheckResult, VerificationReport, bootstrap_se, clt_report,
                            distribution_match, energy_match, order_fit, resolvent_green_kubo)

from .oracle_values import SCALAR_TOY_C, TWO_STATE_C


def test_order_fit_recovers_power_law():
    eps = np.array([0.2, 0.1, 0.05])
    slope, r2 = order_fit(eps, 3.0 * eps ** 1.5)
    assert slope == pytest.approx(1.5)
    assert r2 == pytest.approx(1.0)
    with pytest.raises(DomainError):
        order_fit([0.1, 0.2], [1.0, 2.0])
    with pytest.raises(DomainError):
        order_fit(eps, [1.0, 0.0, 1.0])


def test_resolvent_green_kubo_matches_quadrature_oracle():
    assert resolvent_green_kubo([[-1, 1], [1, -1]], [0.1, 1.4 / 6]) == pytest.approx(
        SCALAR_TOY_C, rel=1e-10)
    assert resolvent_green_kubo([[-1, 1], [3, -3]], [0.1, 1.4 / 6]) == pytest.approx(
        TWO_STATE_C, rel=1e-10)


def test_bootstrap_se_of_variance():
    x = np.random.default_rng(0).standard_normal(400)
    se = bootstrap_se(x, lambda v: np.var(v, ddof=1))
    # normal theory: sd of the sample variance is sqrt(2 / (M - 1))
    assert se == pytest.approx(np.sqrt(2 / 399), rel=0.25)


def test_clt_report_accepts_correct_and_rejects_misscaled():
    rng = np.random.default_rng(1)
    k = rng.normal(0.0, np.sqrt(0.5), 400)
    rep = clt_report(k, 0.5, 1.0, band=(0.8, 1.2))
    assert rep.passed
    assert rep["clt.negative_control"].passed
    bad = clt_report(k, 1.0, 1.0, negative_control=False)
    assert not bad["clt.variance"].passed
    with pytest.raises(ValidationError):
        clt_report(k[:50], 0.5, 1.0)


def test_clt_report_detects_non_gaussian_samples():
    k = np.random.default_rng(2).exponential(1.0, 400)
    rep = clt_report(k, 1.0, 1.0)
    assert not rep["clt.normality"].passed


def test_clt_degenerate_covariance():
    rep = clt_report(np.zeros(200), 0.0, 1.0)
    assert rep.passed and rep.checks[0].name == "clt.variance"


def test_distribution_match():
    x = np.random.default_rng(3).normal(1.0, 2.0, 300)
    assert distribution_match(x, 1.0, 4.0).passed
    rep = distribution_match(x, 2.0, 4.0)
    assert not rep["law.mean"].passed
    rep = distribution_match(x, 1.0, 1.0)
    assert not rep["law.variance"].passed and not rep["law.ks"].passed
    assert distribution_match(np.zeros(10), 0.0, 0.0).passed


def test_energy_match_band():
    assert energy_match([1.0, 1.2, 0.8], 1.0).passed
    assert not energy_match([10.0, 11.0], 1.0).passed


def test_report_serialisation_and_lookup():
    rep = VerificationReport(meta={"seed": np.int64(3)})
    rep.add(CheckResult("a", np.float64(1.0), ">= 0", np.bool_(True), details={"v": np.ones(2)}))
    rep.add(CheckResult("b", 0.1, ">= 0.5", False, hard=True))
    assert not rep.passed
    assert [c.name for c in rep.hard_failures] == ["b"]
    d = json.loads(rep.to_json())
    assert d["checks"][0]["details"]["v"] == [1.0, 1.0]
    assert rep["a"].line().startswith("[PASS] a")
    assert rep.summary().endswith("overall: FAIL")
    with pytest.raises(KeyError):
        rep["c"]
