"""Acceptance criteria 1-11.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one PASS/FAIL
line per criterion at the end of the session.  Criteria 7-11 share one run of
the full default pipeline.
"""

import json
import time

import numpy as np
import pytest

from nlhomog.cli import STAGES, run_pipeline
from nlhomog.config import Config, default_config
from nlhomog.corrector import (InvariantDensity, build_schedule, compute_beta, corrector_residual,
                               corrector_rhs, estimate_decay_rate, solve_cell_problems,
                               solve_invariant_density, solve_stationary_corrector)
from nlhomog.effective import EffectiveCoefficients, estimate_effective, fast_step
from nlhomog.environment import (constant_environment, default_nonsymmetric_environment,
                                 default_symmetric_environment, frozen_nonsymmetric_environment,
                                 sample_path, scalar_toy_environment, shipped_environments)
from nlhomog.fullscale import prepare_fullscale, sample_kappa
from nlhomog.torus import assemble_generator
from nlhomog.verify import clt_report

from .oracle_values import FROZEN_P, SCALAR_TOY_C


def _corrector_run(env, seed=0, span=200.0):
    """Burn-in plus a production window for chi1 with the density of the mode."""
    gen = assemble_generator(env)
    ds = fast_step(env)
    decay = estimate_decay_rate(gen, sample_path(env.driver, 400.0, seed, 7919), ds, seed=seed)
    g_burn = int(round(decay.s_burn / ds))
    g_prod = int(round(span / ds))
    nonsym = not env.symmetric
    g_pb = g_burn if nonsym else 0
    horizon = (g_burn + g_prod + g_pb) * ds
    sch_full = build_schedule(sample_path(env.driver, horizon, seed), 0.0, horizon, ds)
    sch = sch_full.slice(0, g_burn + g_prod)
    p = None
    if nonsym:
        full = solve_invariant_density(gen, sch_full, g_pb * ds)
        p = InvariantDensity(sch, full.values[:sch.n + 1], sch.end)
    drift = compute_beta(gen, sch, p) if nonsym else None
    kind = "g_plus_beta" if nonsym else "g"
    rhs = corrector_rhs(kind, gen, sch, p=p, beta=None if drift is None else drift.beta)
    return gen, sch, p, rhs, decay


# ---------------------------------------------------------------------------
# 1
# ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "constant-coefficient ground truth")
@pytest.mark.parametrize("mode", ["symmetric", "nonsymmetric"])
def test_constant_coefficients(mode, record_property):
    t0 = time.time()
    env = constant_environment()
    eff = estimate_effective(env, mode=mode, s_prod=2000.0, seed=0)
    gen, sch, p, rhs, _ = _corrector_run(env)
    chi = solve_stationary_corrector(gen, sch, rhs)
    dens = solve_invariant_density(gen, sch)
    assert np.abs(chi.values).max() <= 1e-10
    assert np.abs(dens.values - 1.0).max() <= 1e-10
    assert abs(eff.beta) <= 1e-10
    assert abs(eff.theta - 1 / 6) <= 1e-6
    assert abs(eff.H) <= 1e-8
    assert eff.C_scalar == 0.0
    elapsed = time.time() - t0
    assert elapsed <= 60
    record_property("detail", f"{mode}: |Theta-1/6|={abs(eff.theta - 1 / 6):.1e}")


# ---------------------------------------------------------------------------
# 2
# ---------------------------------------------------------------------------


@pytest.mark.criterion(2, "corrector stationarity and uniqueness")
@pytest.mark.parametrize("make_env", [default_symmetric_environment,
                                      default_nonsymmetric_environment])
def test_corrector_stationarity(make_env, record_property):
    t0 = time.time()
    env = make_env()
    gen, sch, p, rhs, decay = _corrector_run(env)
    assert decay.gamma0 > 0
    assert decay.r2 >= 0.95
    a = solve_stationary_corrector(gen, sch, rhs, p=p, s_burn=decay.s_burn)
    start = np.random.default_rng(1).standard_normal(gen.n)
    b = solve_stationary_corrector(gen, sch, rhs, p=p, s_burn=decay.s_burn, chi0=start)
    i0 = sch.step_at(decay.s_burn)
    # two initialisations agree on the production window
    assert np.abs(a.values[i0:] - b.values[i0:]).max() <= 1e-8
    assert corrector_residual(gen, a, rhs) <= 1e-10
    w = np.ones_like(a.values) if p is None else p.values
    means = np.einsum("ni,ni->n", a.values[i0:], w[i0:]) * gen.dxi
    assert means.max() - means.min() <= 1e-7
    assert time.time() - t0 <= 300
    record_property("detail", f"{env.name}: gamma0={decay.gamma0:.3f}, R2={decay.r2:.4f}")


# ---------------------------------------------------------------------------
# 3
# ---------------------------------------------------------------------------


@pytest.mark.criterion(3, "invariant-density contract")
def test_density_nonsymmetric_default():
    env = default_nonsymmetric_environment()
    gen = assemble_generator(env)
    ds = fast_step(env)
    sch = build_schedule(sample_path(env.driver, 400.0, 2), 0.0, 400.0, ds)
    p = solve_invariant_density(gen, sch, s_pburn=200.0)
    mass = p.values.sum(axis=1) * gen.dxi
    assert np.abs(mass - 1.0).max() <= 1e-12
    assert p.values.min() > 0
    # non-trivial: the density is not uniform in this environment
    assert np.abs(p.values - 1.0).max() > 1e-3


@pytest.mark.criterion(3, "invariant-density contract")
def test_density_frozen_matches_null_space():
    env = frozen_nonsymmetric_environment()
    gen = assemble_generator(env)
    sch = build_schedule(sample_path(env.driver, 300.0, 0), 0.0, 300.0, fast_step(env))
    p = solve_invariant_density(gen, sch, s_pburn=150.0)
    stop = sch.step_at(p.valid_until)
    assert np.abs(p.values[:stop + 1] - np.asarray(FROZEN_P)).max() <= 1e-8


# ---------------------------------------------------------------------------
# 4
# ---------------------------------------------------------------------------


@pytest.mark.criterion(4, "positive definiteness of the effective diffusivity")
@pytest.mark.parametrize("name", sorted(shipped_environments()))
def test_positive_definite(name, record_property):
    env = shipped_environments()[name]
    eff = estimate_effective(env, s_prod=4000.0, seed=0)
    sym = 0.5 * (eff.theta_eff + eff.theta_eff.T)
    lam = float(np.linalg.eigvalsh(sym).min())
    assert lam > 0
    assert lam > 4 * eff.theta_se
    record_property("detail", f"{name}: {lam:.4g}")


# ---------------------------------------------------------------------------
# 5
# ---------------------------------------------------------------------------


@pytest.mark.criterion(5, "symmetric-limit consistency")
def test_symmetric_limit_consistency(record_property):
    env = default_symmetric_environment()
    a = estimate_effective(env, mode="symmetric", s_prod=20000.0, seed=4)
    b = estimate_effective(env, mode="nonsymmetric", s_prod=20000.0, seed=4)
    pairs = {"theta": (a.theta, b.theta, a.theta_se),
             "C": (a.C_scalar, b.C_scalar, float(a.C_se[0, 0])),
             "H": (a.H, b.H, a.H_se)}
    for name, (x, y, se) in pairs.items():
        if se <= 1e-12:
            # deterministic quantity (identically zero up to rounding)
            assert abs(x - y) <= 1e-8, name
        else:
            assert abs(x - y) <= 3 * se, name
    # the same path drives both runs, so the outputs coincide deterministically
    assert abs(a.theta - b.theta) <= 1e-8
    assert abs(b.beta) <= 1e-8 and b.h6
    record_property("detail", f"dTheta={abs(a.theta - b.theta):.1e}")


# ---------------------------------------------------------------------------
# 6
# ---------------------------------------------------------------------------


@pytest.mark.criterion(6, "functional CLT for the fluctuation integral")
def test_functional_clt(record_property):
    t0 = time.time()
    env = scalar_toy_environment()
    eff = EffectiveCoefficients.from_values(1 / 6)
    setup = prepare_fullscale(env, eff, 1.0, seed=0, s_burn=10.0)
    kappa = [sample_kappa(setup, 0.02, r).kappa[-1] for r in range(400)]
    rep = clt_report(kappa, SCALAR_TOY_C, 1.0, eps=0.02, band=(0.8, 1.2), label="clt")
    ratio = rep["clt.ratio_band"].statistic
    pval = rep["clt.normality"].statistic
    record_property("detail", f"variance ratio {ratio:.3f}, Shapiro p {pval:.3f}")
    assert rep["clt.ratio_band"].passed
    assert rep["clt.normality"].passed
    assert time.time() - t0 <= 600


# ---------------------------------------------------------------------------
# 7 - 11: full default pipeline
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_pipeline")
    t0 = time.time()
    status, manifest = run_pipeline(cfg=default_config(), out=out)
    elapsed = time.time() - t0
    report = json.loads((out / "verify" / "report.json").read_text())
    checks = {c["name"]: c for c in report["checks"]}
    return out, status, manifest, checks, elapsed


def _detail(checks, *names):
    return ", ".join(f"{n}={checks[n]['statistic']:.3g}" for n in names)


@pytest.mark.criterion(7, "first-order homogenization")
def test_first_order_homogenization(default_run, record_property):
    _, _, manifest, checks, _ = default_run
    c = checks["order.first_order_error"]
    record_property("detail", f"slope {c['statistic']:.3f}")
    assert manifest["config"]["simulate"]["eps"] == [0.2, 0.1, 0.05]
    assert manifest["config"]["simulate"]["T"] == 0.5
    assert c["statistic"] >= 0.8


@pytest.mark.criterion(8, "diffusion approximation")
def test_diffusion_approximation(default_run, record_property):
    _, _, manifest, checks, _ = default_run
    assert manifest["config"]["simulate"]["law_replicates"] == 200
    for j in range(3):
        assert abs(checks[f"law.phi{j}.mean"]["statistic"]) <= 3.0
        r = checks[f"law.phi{j}.variance"]["statistic"]
        assert 0.75 <= r <= 1.33
        assert checks[f"law.phi{j}.mean"]["n_samples"] == 200
    assert checks["energy.ratio"]["passed"]
    # ablating the corrector term must fail the energy comparison
    assert checks["negative_control.chi1_ablation"]["passed"]
    record_property("detail", _detail(checks, "law.phi0.variance", "law.phi1.variance",
                                      "law.phi2.variance", "negative_control.chi1_ablation"))


@pytest.mark.criterion(9, "expansion residual and sign arbitration")
def test_expansion_residual(default_run, record_property):
    _, _, _, checks, _ = default_run
    record_property("detail", _detail(checks, "residual.slope", "negative_control.wrong_sign_H"))
    assert checks["residual.slope"]["statistic"] >= 0.8
    assert checks["negative_control.wrong_sign_H"]["statistic"] < 0.5


@pytest.mark.criterion(10, "oscillating-source decay")
def test_oscillating_source_decay(default_run, record_property):
    _, _, _, checks, _ = default_run
    record_property("detail", _detail(checks, "decay.theta", "decay.ell"))
    for kind in ("theta", "ell"):
        v = checks[f"decay.{kind}"]["details"]["sup_norms"]
        assert all(b <= 1.2 * a for a, b in zip(v, v[1:]))
        assert v[-1] < v[0]


@pytest.mark.criterion(11, "determinism")
def test_pipeline_determinism(default_run, tmp_path, record_property):
    out, status, manifest, _, elapsed = default_run
    assert status == 0
    # rerun from the configuration recorded in the manifest, in a fresh directory
    cfg = Config(json.loads(json.dumps(manifest["config"])))
    _, again = run_pipeline(cfg=cfg, out=tmp_path / "rerun")
    assert again["config_hash"] == manifest["config_hash"]
    for stage in STAGES:
        assert again["stages"][stage]["digests"] == manifest["stages"][stage]["digests"], stage
    n = sum(len(r["digests"]) for r in manifest["stages"].values())
    record_property("detail", f"{n} payload files identical; first run {elapsed:.0f} s")
