"""Verification harness: CLT statistics, order fits, law matching, residuals and decay checks.

Every check records its statistic, tolerance and inputs so that a report can
be regenerated from the same seeds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .corrector import build_schedule, solve_cell_problems, solve_invariant_density
from .environment import MarkovDriver, make_rng, sample_path
from .errors import DomainError, ValidationError
from .fullscale import FullScaleSetup, forced_problem, solve_homogenized

__all__ = [
    "CheckResult", "VerificationReport", "order_fit", "clt_report", "distribution_match",
    "expansion_residual", "residual_order", "appendix_decay_check", "resolvent_green_kubo",
    "bootstrap_se", "energy_match",
]


@dataclass
class CheckResult:
    name: str
    statistic: float
    tolerance: object
    passed: bool
    n_samples: int = 0
    seeds: Sequence[int] = ()
    details: dict = field(default_factory=dict)
    hard: bool = False

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: statistic={self.statistic:.6g} tolerance={self.tolerance}"


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def extend(self, other: "VerificationReport"):
        self.checks.extend(other.checks)
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def hard_failures(self) -> list:
        return [c for c in self.checks if c.hard and not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": bool(self.passed), "meta": _jsonable(self.meta),
                "checks": [_jsonable(asdict(c)) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def summary(self) -> str:
        lines = [c.line() for c in self.checks]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------


def order_fit(eps, errors) -> tuple[float, float]:
    """Least-squares slope of ``log e`` against ``log eps`` and its R^2."""
    eps = np.asarray(eps, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(eps) < 3 or len(eps) != len(e):
        raise DomainError("order fit needs at least three (eps, error) pairs")
    if np.any(e <= 0) or np.any(eps <= 0):
        raise DomainError("errors and eps must be positive")
    x, y = np.log(eps), np.log(e)
    slope, icpt = np.polyfit(x, y, 1)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - slope * x - icpt) ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)


def bootstrap_se(samples, statistic=np.var, n_boot: int = 2000, seed: int = 0) -> float:
    x = np.asarray(samples, dtype=float)
    rng = make_rng(seed, 991)
    idx = rng.integers(0, len(x), (n_boot, len(x)))
    return float(np.std([statistic(x[i]) for i in idx], ddof=1))


def resolvent_green_kubo(Q, values) -> float:
    """``C = 2 sum_i pi_i f_i g_i`` with ``-Q g = f - <f>_pi`` (scalar observable of the chain)."""
    drv = MarkovDriver(np.asarray(Q, dtype=float))
    f = np.asarray(values, dtype=float)
    pi = drv.pi
    ft = f - pi @ f
    g = np.linalg.lstsq(-drv.Q, ft, rcond=None)[0]
    g -= pi @ g
    return float(2.0 * np.sum(pi * ft * g))


def clt_report(kappa, C: float, T: float, *, eps: Optional[float] = None, seed: int = 0,
               label: str = "clt", band: Optional[tuple] = None,
               negative_control: bool = True) -> VerificationReport:
    """Compare ``Var kappa^eps(T)`` with ``T C`` and test marginal normality."""
    k = np.asarray(kappa, dtype=float)
    M = len(k)
    if M < 100:
        raise ValidationError("CLT check needs at least 100 samples")
    rep = VerificationReport(meta={"label": label, "eps": eps, "M": M, "C": C, "T": T})
    target = T * float(C)
    var = float(np.var(k, ddof=1))
    se = bootstrap_se(k, lambda x: np.var(x, ddof=1), seed=seed)
    scale = max(abs(target), 1e-300)
    if target <= 0:
        ok = var <= 1e-20 + 4 * se
        rep.add(CheckResult(f"{label}.variance", var, "degenerate C: zero variance", ok, M,
                            (seed,), {"target": target}, hard=not ok))
        return rep
    ratio = var / target
    rep.add(CheckResult(f"{label}.variance", ratio, f"|ratio-1| <= 4 se ({4 * se / scale:.3g})",
                        abs(var - target) <= 4 * se, M, (seed,),
                        {"variance": var, "target": target, "se": se}))
    if band is not None:
        rep.add(CheckResult(f"{label}.ratio_band", ratio, tuple(band),
                            band[0] <= ratio <= band[1], M, (seed,)))
    pval = float(stats.shapiro(k).pvalue)
    rep.add(CheckResult(f"{label}.normality", pval, "p >= 0.01", pval >= 0.01, M, (seed,)))
    if negative_control:
        bad = 2.0 * target
        rep.add(CheckResult(f"{label}.negative_control", var / bad,
                            "mis-scaled C must be rejected", abs(var - bad) > 4 * se, M, (seed,)))
    return rep


def distribution_match(samples, mean: float, var: float, *, label: str = "law",
                       band=(0.75, 1.33), z_max: float = 3.0, alpha: float = 0.01,
                       seeds: Sequence[int] = ()) -> VerificationReport:
    """Mean z-test, variance ratio and Kolmogorov-Smirnov distance against ``N(mean, var)``."""
    x = np.asarray(samples, dtype=float)
    M = len(x)
    rep = VerificationReport(meta={"label": label, "M": M, "mean": mean, "var": var})
    s2 = float(np.var(x, ddof=1)) if M > 1 else 0.0
    m = float(np.mean(x))
    if var <= 0 and s2 <= 1e-24:
        rep.add(CheckResult(f"{label}.degenerate", abs(m - mean), "both moments near zero",
                            abs(m - mean) <= 1e-10, M, seeds))
        return rep
    se = np.sqrt(s2 / M)
    z = (m - mean) / se if se > 0 else np.inf
    rep.add(CheckResult(f"{label}.mean", float(z), f"|z| <= {z_max}", abs(z) <= z_max, M, seeds,
                        {"sample_mean": m, "target": mean, "se": float(se)}))
    ratio = s2 / var if var > 0 else np.inf
    rep.add(CheckResult(f"{label}.variance", float(ratio), tuple(band),
                        band[0] <= ratio <= band[1], M, seeds,
                        {"sample_var": s2, "target": var}))
    pval = float(stats.kstest(x, "norm", args=(mean, np.sqrt(var))).pvalue) if var > 0 else 0.0
    rep.add(CheckResult(f"{label}.ks", pval, f"p >= {alpha}", pval >= alpha, M, seeds))
    return rep


def energy_match(sq_norms, expected: float, *, label: str = "energy",
                 band=(0.75, 1.33), seeds: Sequence[int] = ()) -> VerificationReport:
    """Ratio of the sample mean of ``||U^eps(T)||^2`` to ``E ||v(T)||^2``.

    Unlike smooth projections this statistic sees the oscillating part of
    ``U^eps``, so it detects a missing first corrector.
    """
    x = np.asarray(sq_norms, dtype=float)
    rep = VerificationReport(meta={"label": label, "M": len(x), "expected": expected})
    ratio = float(np.mean(x) / expected) if expected > 0 else np.inf
    rep.add(CheckResult(f"{label}.ratio", ratio, tuple(band), band[0] <= ratio <= band[1],
                        len(x), seeds, {"mean_sq_norm": float(np.mean(x))}))
    return rep


# ---------------------------------------------------------------------------
# Expansion residual
# ---------------------------------------------------------------------------


def expansion_residual(setup: FullScaleSetup, eps: float, replicate: int = 0, *,
                       h_sign: float = 1.0, n_times: int = 16) -> np.ndarray:
    """Normalized residual of the two-corrector ansatz along one path.

    For ``w = u0 + eps chi1 u0' + eps^2 chi2 u0''`` and one Euler step this
    returns ``||rho_n|| / eps`` at ``n_times`` sampled steps, where

    ``rho_n = (w^{n+1} - w^n) / dt - L^eps w^n + Theta~_n u0''
              - eps (chi1^{n+1} Theta_eff - h_sign H_n) u0'''``.

    With the correct drift sign (``h_sign = 1``) the result is O(eps).
    Symmetric mode only (no moving frame).
    """
    if setup.mode != "symmetric":
        raise ValidationError("expansion residual is implemented for the symmetric mode")
    S = setup.fast_horizon(eps)
    s0 = setup.s_burn
    path = sample_path(setup.env.driver, s0 + S, setup.seed, replicate)
    sch = build_schedule(path, 0.0, s0 + S, setup.ds)
    i0, i1 = sch.step_at(s0), sch.n
    picks = np.unique(np.round(np.linspace(i0, i1 - 1, n_times)).astype(int))
    save = np.unique(np.concatenate([picks, picks + 1]))
    cells = solve_cell_problems(setup.gen, sch, save_steps=save)
    grid = setup.grid(eps)
    res = grid.residues
    th_eff = setup.eff.theta
    u0 = solve_homogenized(th_eff, setup.initial, setup.T, grid)

    def ansatz(step, t):
        c1, c2, _ = cells.snapshot(step)
        return (u0.evaluate(t) + eps * c1[res] * u0.evaluate(t, 1)
                + eps ** 2 * c2[res] * u0.evaluate(t, 2))

    out = []
    for n in picks:
        tau = sch.taus[n]
        t0 = (sch.starts[n] - s0) * eps ** 2
        t1 = t0 + tau * eps ** 2
        w0, w1 = ansatz(n, t0), ansatz(n + 1, t1)
        _, _, Hn = cells.snapshot(n)
        c1n1, _, _ = cells.snapshot(n + 1)
        R = (w1 - w0) / (tau * eps ** 2) - setup.op.apply(sch.states[n], w0, eps)
        rho = (R + (cells.theta[n] - th_eff) * u0.evaluate(t0, 2)
               - eps * (c1n1[res] * th_eff - h_sign * Hn[res]) * u0.evaluate(t0, 3))
        out.append(grid.norm(rho) / eps)
    return np.array(out)


def residual_order(setup: FullScaleSetup, eps_list, replicate: int = 0, *,
                   h_sign: float = 1.0, n_times: int = 16, label: str = "residual",
                   threshold: float = 0.8, hard_floor: float = 0.5) -> VerificationReport:
    """Slope of the maximal normalized residual along the eps ladder."""
    vals = [float(np.max(expansion_residual(setup, e, replicate, h_sign=h_sign,
                                            n_times=n_times))) for e in eps_list]
    slope, r2 = order_fit(eps_list, vals)
    rep = VerificationReport(meta={"label": label, "eps": list(eps_list), "residual": vals,
                                   "h_sign": h_sign})
    rep.add(CheckResult(f"{label}.slope", slope, f">= {threshold}", slope >= threshold, 1,
                        (setup.seed,), {"r2": r2, "values": vals}, hard=slope < hard_floor))
    return rep


# ---------------------------------------------------------------------------
# Oscillating-source decay
# ---------------------------------------------------------------------------


def appendix_decay_check(setup: FullScaleSetup, eps_list, kinds=("theta", "ell", "hom"),
                         replicates: Sequence[int] = (0, 1, 2, 3), noise: float = 0.2,
                         n_monitor: int = 20) -> VerificationReport:
    """Forced problems with oscillating sources: sup-in-time norms must decrease with eps.

    The sup norm is averaged (root mean square) over ``replicates`` paths.

    ``"hom"`` forces with ``u0`` itself and measures the distance to the
    homogenized forced solution ``t u0(t)``.
    """
    rep = VerificationReport(meta={"eps": list(eps_list), "replicates": list(replicates)})
    for kind in kinds:
        vals = []
        for eps in eps_list:
            sup = [np.max(forced_problem(setup, eps, r, kind, n_monitor=n_monitor))
                   for r in replicates]
            vals.append(float(np.sqrt(np.mean(np.square(sup)))))
        v = np.array(vals)
        ok = bool(np.all(v[1:] <= (1 + noise) * v[:-1]) and v[-1] < v[0])
        rep.add(CheckResult(f"decay.{kind}", float(v[-1] / v[0]),
                            f"monotone within {noise:.0%}", ok, len(v) * len(replicates), (setup.seed,),
                            {"sup_norms": vals}))
    return rep
