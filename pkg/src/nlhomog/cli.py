"""Command line orchestration: validate, correctors, effective, simulate, clt, spde, verify.

Each stage writes its payload files under ``<out>/<stage>/`` and records a
stage hash in ``<out>/manifest.json``.  A stage is skipped when its hash
matches, all of its outputs exist and none of its upstream stages ran in the
same invocation.  Payloads carry the hash of the configuration sections
their stage reads (``config_hash``), so editing one section leaves the
payloads of unrelated stages valid.  Payload files never contain timestamps;
those live only in the manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import multiprocessing as mp
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, default_config, load_config
from .corrector import (DecayEstimate, InvariantDensity, build_schedule, estimate_decay_rate,
                        solve_cell_problems, solve_invariant_density)
from .effective import EffectiveCoefficients, estimate_effective, fast_step, resolve_mode
from .environment import shipped_environments, sample_path, validate_hypotheses
from .errors import ConfigurationError, HomogenizationError, ValidationError
from .fullscale import (gaussian_test_functions, prepare_fullscale, run_replicate,
                        sample_kappa, solve_homogenized)
from .io import read_csv, read_json, write_csv, write_field, write_json
from .spde import LimitProblem, expected_sq_norm, projection_moments, sample_projections
from .torus import assemble_generator
from .verify import (CheckResult, VerificationReport, appendix_decay_check, clt_report,
                     distribution_match, energy_match, order_fit, residual_order)

log = logging.getLogger("nlhomog")

ENV_PREFIX = "NLHOMOG_"
STAGES = ("validate", "correctors", "effective", "simulate", "clt", "spde", "verify")
DEPENDS = {
    "validate": (),
    "correctors": ("validate",),
    "effective": ("correctors",),
    "simulate": ("effective",),
    "clt": ("effective",),
    "spde": ("effective",),
    "verify": ("simulate", "clt", "spde"),
}
SECTIONS = {
    "validate": ("run",),
    "correctors": ("run", "correctors"),
    "effective": ("run", "correctors", "effective"),
    "simulate": ("run", "correctors", "effective", "simulate"),
    "clt": ("run", "correctors", "effective", "clt"),
    "spde": ("run", "correctors", "effective", "simulate", "spde"),
    "verify": tuple(default_config().values),
}
# per-stage seed streams
STREAMS = {"correctors": 7919, "effective": 0, "simulate": 0, "clt": 100000, "spde": 200000}


class OrderingError(HomogenizationError):
    """A stage was requested before its inputs exist."""


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------


class Context:
    def __init__(self, cfg: Config, out: Path, strict: bool = False):
        self.cfg = cfg
        self.out = Path(out)
        self.strict = strict
        self.config_hash = cfg.hash()
        self.manifest_path = self.out / "manifest.json"
        self.manifest = self._load_manifest()
        self.ran: set[str] = set()
        self._env = None
        self._eff = None
        self.current = "verify"

    def _load_manifest(self) -> dict:
        if self.manifest_path.exists():
            try:
                return read_json(self.manifest_path)
            except json.JSONDecodeError:
                log.warning("manifest unreadable; starting afresh")
        return {"stages": {}}

    @property
    def seed(self) -> int:
        return self.cfg["run"]["seed"]

    @property
    def workers(self) -> int:
        return self.cfg["run"]["workers"]

    def stage_hash(self, stage: str) -> str:
        return self.cfg.hash(SECTIONS[stage])

    @property
    def payload_hash(self) -> str:
        """Hash of the config sections the running stage reads; stamped into its payloads."""
        return self.stage_hash(self.current)

    def env(self):
        if self._env is None:
            envs = shipped_environments(self.cfg["run"]["n_torus"])
            name = self.cfg["run"]["environment"]
            if name not in envs:
                raise ConfigurationError(
                    f"[run] environment {name!r} unknown; choose from {sorted(envs)}")
            self._env = envs[name]
        return self._env

    def mode(self) -> str:
        return resolve_mode(self.env(), self.cfg["run"]["mode"])

    def path(self, stage: str, name: str) -> Path:
        return self.out / stage / name

    def effective(self) -> EffectiveCoefficients:
        if self._eff is None:
            p = self.path("effective", "effective.json")
            if not p.exists():
                raise OrderingError("effective coefficients missing; run the effective stage")
            d = read_json(p)
            d.pop("config_hash", None)
            self._eff = EffectiveCoefficients.from_dict(d)
        return self._eff

    def setup(self, T: float):
        sim = self.cfg["simulate"]
        return prepare_fullscale(self.env(), self.effective(), T, mode=self.mode(),
                                 seed=self.seed, test_functions=tuple(sim["test_functions"]),
                                 n_snapshots=sim["snapshots"], tail_tol=sim["tail_tol"])

    def write_manifest(self):
        m = self.manifest
        m["config_hash"] = self.config_hash
        m["tool_version"] = __version__
        m["config"] = self.cfg.values
        m["tolerances"] = {k: v for k, v in self.cfg["verify"].items()}
        m["stage_order"] = [s for s in STAGES if s in m["stages"]]
        write_json(self.manifest_path, m)


# ---------------------------------------------------------------------------
# Worker pool (fork start: children inherit the setup, only indices are sent)
# ---------------------------------------------------------------------------

_WORK = {}


def _replicate_task(args):
    eps, r, with_r1 = args
    return run_replicate(_WORK["setup"], eps, r, with_R1=with_r1, keep_fields=r == 0)


def _kappa_task(args):
    eps, r = args
    return sample_kappa(_WORK["setup"], eps, r).kappa[-1]


def _pool_map(fn, tasks, setup, workers: int):
    _WORK["setup"] = setup
    try:
        if workers <= 1 or len(tasks) < 2:
            return [fn(t) for t in tasks]
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    finally:
        _WORK.clear()


def _eps_tag(eps: float) -> str:
    return f"{eps:g}".replace(".", "p")


# ---------------------------------------------------------------------------
# Stages; each returns the list of written files (relative to out)
# ---------------------------------------------------------------------------


def stage_validate(ctx: Context) -> list[Path]:
    env = ctx.env()
    rep = validate_hypotheses(env)
    payload = {"config_hash": ctx.payload_hash, "environment": env.name,
               "mode": ctx.mode(), "hypotheses": rep.to_dict(),
               "fast_step": fast_step(env), "n_torus": env.n_torus, "states": env.K}
    failed = [k for k, v in rep.checks.items() if v.status == "fail"]
    if failed and ctx.strict:
        raise ValidationError(f"hypotheses failed: {failed}")
    return [write_json(ctx.path("validate", "hypotheses.json"), payload)]


def stage_correctors(ctx: Context) -> list[Path]:
    env = ctx.env()
    c = ctx.cfg["correctors"]
    gen = assemble_generator(env)
    ds = fast_step(env)
    pilot = sample_path(env.driver, c["pilot_horizon"], ctx.seed, STREAMS["correctors"])
    decay = estimate_decay_rate(gen, pilot, ds, seed=ctx.seed)
    files = [write_json(ctx.path("correctors", "decay.json"),
                        {"config_hash": ctx.payload_hash, "gamma0": decay.gamma0, "r2": decay.r2,
                         "s_burn": decay.s_burn, "ds": ds})]
    files.append(write_csv(ctx.path("correctors", "decay.csv"),
                           [{"s": float(s), "norm": float(n)}
                            for s, n in zip(decay.times, decay.norms)], ctx.payload_hash))
    # corrector snapshot after burn-in
    mode = ctx.mode()
    span = decay.s_burn + c["snapshot_span"]
    g = int(np.ceil(span / ds))
    g_pb = int(round(decay.s_burn / ds)) if mode == "nonsymmetric" else 0
    path = sample_path(env.driver, (g + g_pb) * ds, ctx.seed, STREAMS["correctors"] + 1)
    sch = build_schedule(path, 0.0, (g + g_pb) * ds, ds)
    sub = sch.slice(0, g)
    p = None
    if mode == "nonsymmetric":
        full = solve_invariant_density(gen, sch, g_pb * ds)
        p = InvariantDensity(sub, full.values[:sub.n + 1], sub.end)
    cells = solve_cell_problems(gen, sub, p=p, use_beta=mode == "nonsymmetric",
                                save_steps=[sub.n])
    c1, c2, _ = cells.snapshot(sub.n)
    pv = p.values[-1] if p is not None else np.ones(gen.n)
    rows = [{"xi": float(x), "chi1": float(a), "chi2": float(b), "p": float(q)}
            for x, a, b, q in zip(gen.grid.nodes, c1, c2, pv)]
    files.append(write_csv(ctx.path("correctors", "snapshot.csv"), rows, ctx.payload_hash))
    return files


def stage_effective(ctx: Context) -> list[Path]:
    env = ctx.env()
    e = ctx.cfg["effective"]
    d = read_json(ctx.path("correctors", "decay.json"))
    _, rows = read_csv(ctx.path("correctors", "decay.csv"))
    decay = DecayEstimate(d["gamma0"], d["r2"], d["s_burn"],
                          np.array([r["s"] for r in rows]), np.array([r["norm"] for r in rows]))
    eff = estimate_effective(env, ctx.mode(), seed=ctx.seed, stream=STREAMS["effective"],
                             s_prod=e["s_prod"], n_batches=e["n_batches"], decay=decay,
                             strict=ctx.strict, h6_tol=e["h6_tol"])
    ctx._eff = eff
    payload = eff.to_dict()
    payload["config_hash"] = ctx.payload_hash
    return [write_json(ctx.path("effective", "effective.json"), payload)]


def stage_simulate(ctx: Context) -> list[Path]:
    sim = ctx.cfg["simulate"]
    setup = ctx.setup(sim["T"])
    files = []
    for eps in sim["eps"]:
        M = sim["replicates"]
        if eps == min(sim["eps"]):
            M = max(M, sim["law_replicates"])
        tasks = [(eps, r, sim["with_r1"]) for r in range(M)]
        results = _pool_map(_replicate_task, tasks, setup, ctx.workers)
        tag = _eps_tag(eps)
        files.append(write_csv(ctx.path("simulate", f"replicates_eps{tag}.csv"),
                               [r.to_row() for r in results], ctx.payload_hash))
        r0 = results[0]
        grid = setup.grid(eps)
        head = {"config_hash": ctx.payload_hash, "eps": eps, "replicate": 0, "t": sim["T"],
                "grid": grid.describe()}
        for name in ("u_eps", "U_eps"):
            binp, js = write_field(ctx.path("simulate", f"fields/{name}_eps{tag}_r0"),
                                   r0.fields[name], {**head, "field": name})
            files += [binp, js]
    return files


def stage_clt(ctx: Context) -> list[Path]:
    c = ctx.cfg["clt"]
    setup = ctx.setup(c["T"])
    files = []
    for eps in c["eps"]:
        tasks = [(eps, STREAMS["clt"] + r) for r in range(c["replicates"])]
        kap = _pool_map(_kappa_task, tasks, setup, ctx.workers)
        rows = [{"replicate": r, "kappa_T": float(k)} for r, k in enumerate(kap)]
        files.append(write_csv(ctx.path("clt", f"kappa_eps{_eps_tag(eps)}.csv"), rows,
                               ctx.payload_hash))
    return files


def _limit_problem(ctx: Context):
    sim = ctx.cfg["simulate"]
    setup = ctx.setup(sim["T"])
    grid = setup.grid(min(sim["eps"]))
    u0 = solve_homogenized(ctx.effective().theta, setup.initial, sim["T"], grid)
    return LimitProblem.from_effective(ctx.effective(), u0, sim["T"]), setup, grid


def stage_spde(ctx: Context) -> list[Path]:
    sp = ctx.cfg["spde"]
    prob, setup, grid = _limit_problem(ctx)
    phis = gaussian_test_functions(grid, setup.test_functions)
    moments = []
    for (c, w), ph in zip(setup.test_functions, phis):
        m, v = projection_moments(prob, ph)
        moments.append({"center": c, "width": w, "mean": m, "variance": v})
    payload = {"config_hash": ctx.payload_hash, "moments": moments,
               "expected_sq_norm": expected_sq_norm(prob), "theta": prob.theta,
               "A": prob.A, "H": prob.H, "T": prob.T, "grid": grid.describe()}
    files = [write_json(ctx.path("spde", "moments.json"), payload)]
    S = sample_projections(prob, phis, sp["samples"], sp["n_steps"],
                           seed=ctx.seed + STREAMS["spde"])
    rows = [{"sample": i, **{f"proj_{j}": float(v) for j, v in enumerate(row)}}
            for i, row in enumerate(S)]
    files.append(write_csv(ctx.path("spde", "samples.csv"), rows, ctx.payload_hash))
    return files


def stage_verify(ctx: Context) -> list[Path]:
    v = ctx.cfg["verify"]
    sim = ctx.cfg["simulate"]
    eff = ctx.effective()
    rep = VerificationReport(meta={"config_hash": ctx.config_hash, "seed": ctx.seed,
                                   "environment": ctx.env().name, "mode": ctx.mode()})
    skipped = []
    eps_list = list(sim["eps"])
    data = {}
    for eps in eps_list:
        chash, rows = read_csv(ctx.path("simulate", f"replicates_eps{_eps_tag(eps)}.csv"))
        if chash != ctx.stage_hash("simulate"):
            raise ValidationError("simulate output carries a different stage hash")
        data[eps] = rows
    # first-order homogenization error
    if len(eps_list) >= 3:
        n = sim["replicates"]
        errs = [float(np.sqrt(np.mean([r["error_L2"] ** 2 for r in data[e][:n]])))
                for e in eps_list]
        if min(errs) > 0:
            slope, r2 = order_fit(eps_list, errs)
            rep.add(CheckResult("order.first_order_error", slope, f">= {v['slope_threshold']}",
                                slope >= v["slope_threshold"], len(data[eps_list[0]]),
                                (ctx.seed,), {"errors": errs, "r2": r2}))
        else:
            skipped.append("order.first_order_error (zero error)")
    # law of the normalized difference at the smallest eps
    mom = read_json(ctx.path("spde", "moments.json"))
    e_min = min(eps_list)
    rows = data[e_min]
    M = len(rows)
    band = tuple(v["variance_band"])
    if M >= 100:
        for j, mm in enumerate(mom["moments"]):
            x = [r[f"proj_U_{j}"] for r in rows]
            rep.extend(distribution_match(x, mm["mean"], mm["variance"], label=f"law.phi{j}",
                                          band=band, z_max=v["z_max"], alpha=v["alpha"],
                                          seeds=(ctx.seed,)))
        ev = mom["expected_sq_norm"]
        if ev > 0:
            rep.extend(energy_match([r["norm_U"] ** 2 for r in rows], ev, label="energy",
                                    band=band, seeds=(ctx.seed,)))
            neg = energy_match([r["norm_U_ablated"] ** 2 for r in rows], ev,
                               label="energy_ablated", band=band)
            c = neg.checks[0]
            rep.add(CheckResult("negative_control.chi1_ablation", c.statistic,
                                "ablated energy must leave the band", not c.passed, M,
                                (ctx.seed,)))
    else:
        skipped.append(f"law checks (need >= 100 replicates, have {M})")
    # CLT
    c = ctx.cfg["clt"]
    for eps in c["eps"]:
        _, krows = read_csv(ctx.path("clt", f"kappa_eps{_eps_tag(eps)}.csv"))
        k = [r["kappa_T"] for r in krows]
        if len(k) >= 100:
            rep.extend(clt_report(k, eff.C_scalar, c["T"], eps=eps, seed=ctx.seed,
                                  label=f"clt.eps{_eps_tag(eps)}"))
        else:
            skipped.append(f"clt eps={eps} (need >= 100 paths, have {len(k)})")
    # expansion residual and oscillating-source decay
    setup = ctx.setup(sim["T"])
    if v["residual"] and len(eps_list) >= 3 and ctx.mode() == "symmetric":
        rep.extend(residual_order(setup, eps_list, threshold=v["slope_threshold"],
                                  hard_floor=v["slope_hard_floor"]))
        neg = residual_order(setup, eps_list, h_sign=-1.0, label="residual_wrong_sign",
                             threshold=v["slope_threshold"], hard_floor=-np.inf)
        c = neg.checks[0]
        rep.add(CheckResult("negative_control.wrong_sign_H", c.statistic,
                            f"< {v['slope_hard_floor']}", c.statistic < v["slope_hard_floor"], 1,
                            (ctx.seed,), c.details))
    if v["decay"] and len(eps_list) >= 2:
        rep.extend(appendix_decay_check(setup, eps_list, noise=v["decay_noise"]))
    rep.meta["skipped"] = skipped
    files = [write_json(ctx.path("verify", "report.json"), rep.to_dict())]
    p = ctx.path("verify", "report.txt")
    p.write_text(rep.summary() + "\n")
    files.append(p)
    ctx.report = rep
    return files


RUNNERS = {"validate": stage_validate, "correctors": stage_correctors,
           "effective": stage_effective, "simulate": stage_simulate, "clt": stage_clt,
           "spde": stage_spde, "verify": stage_verify}


def _closure(stages) -> list[str]:
    need = set()

    def add(s):
        if s not in need:
            need.add(s)
            for d in DEPENDS[s]:
                add(d)

    for s in stages:
        add(s)
    return [s for s in STAGES if s in need]


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_stage(ctx: Context, stage: str, force: bool = False) -> bool:
    """Run ``stage`` unless its recorded outputs are current; return True when it ran."""
    rec = ctx.manifest["stages"].get(stage)
    h = ctx.stage_hash(stage)
    upstream_ran = any(d in ctx.ran for d in DEPENDS[stage])
    current = (rec is not None and rec.get("hash") == h and not upstream_ran and not force
               and all((ctx.out / f).exists() for f in rec.get("outputs", [])))
    if current:
        log.info("stage %s: up to date, skipped", stage)
        if stage == "verify":
            ctx.report = None
        return False
    for d in DEPENDS[stage]:
        drec = ctx.manifest["stages"].get(d)
        if drec is None or drec.get("hash") != ctx.stage_hash(d):
            raise OrderingError(f"stage {stage} needs {d}, which has not been run")
    t0 = time.time()
    log.info("stage %s: running", stage)
    ctx.current = stage
    try:
        files = RUNNERS[stage](ctx)
    except HomogenizationError as exc:
        raise type(exc)(f"[{stage}] {exc}") from exc
    rel = sorted(str(Path(f).relative_to(ctx.out)) for f in files)
    ctx.manifest["stages"][stage] = {
        "hash": h, "seed": ctx.seed, "stream": STREAMS.get(stage), "outputs": rel,
        "digests": {f: _file_digest(ctx.out / f) for f in rel},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "elapsed_s": round(time.time() - t0, 3),
    }
    ctx.ran.add(stage)
    ctx.write_manifest()
    return True


def run_pipeline(config=None, stages=None, out="runs/default", *, seed=None, workers=None,
                 strict=False, force=False, cfg: Config | None = None) -> tuple[int, dict]:
    """Run the selected stages (and their prerequisites) in dependency order.

    Returns the exit status (0 success, 1 verification failure) and the manifest.
    """
    cfg = cfg if cfg is not None else load_config(config)
    if seed is not None:
        cfg.set("run", "seed", int(seed))
    if workers is not None:
        cfg.set("run", "workers", int(workers))
    if strict:
        cfg.set("run", "strict", True)
    ctx = Context(cfg, Path(out), strict=cfg["run"]["strict"])
    stages = list(STAGES) if not stages else list(stages)
    for s in stages:
        if s not in STAGES:
            raise ConfigurationError(f"unknown stage {s!r}")
    order = _closure(stages)
    ctx.report = None
    for s in order:
        run_stage(ctx, s, force=force and s in stages)
    ctx.write_manifest()
    status = 0
    if "verify" in order:
        rep_path = ctx.path("verify", "report.json")
        rep = read_json(rep_path)
        failed = [c for c in rep["checks"] if not c["passed"]]
        status = 1 if failed else 0
    return status, ctx.manifest


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------


def _env_default(name: str, cast=str, default=None):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return default
    if cast is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return cast(raw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nlhomog",
        description="Homogenization and diffusion-approximation experiments for nonlocal "
                    "operators in a random dynamic environment.",
        epilog=f"Every global flag can also be set through {ENV_PREFIX}<FLAG> "
               "(for example NLHOMOG_SEED=3).")
    p.add_argument("--config", default=_env_default("CONFIG"), help="INI configuration file")
    p.add_argument("--out", default=_env_default("OUT", default="runs/default"),
                   help="output directory")
    p.add_argument("--seed", type=int, default=_env_default("SEED", int))
    p.add_argument("--workers", type=int, default=_env_default("WORKERS", int))
    p.add_argument("--strict", action="store_true", default=_env_default("STRICT", bool, False))
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name, help=f"run the {name} stage (and missing prerequisites)")
        sp.add_argument("--force", action="store_true", help="rerun even if up to date")
        if name == "simulate":
            sp.add_argument("--eps", type=str, help="comma separated eps list")
            sp.add_argument("--T", type=float, dest="T")
            sp.add_argument("--snapshots", type=int)
            sp.add_argument("--replicates", type=int)
            sp.add_argument("--law-replicates", type=int, dest="law_replicates")
            sp.add_argument("--mode", choices=("auto", "symmetric", "nonsymmetric"))
    pp = sub.add_parser("pipeline", help="run several stages in dependency order")
    pp.add_argument("--stages", default=",".join(STAGES),
                    help="comma separated stage list (default: all)")
    pp.add_argument("--force", action="store_true")
    sub.add_parser("show-config", help="print the effective configuration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            if args.eps:
                cfg.set("simulate", "eps", [float(e) for e in args.eps.split(",")])
            for key in ("T", "snapshots", "replicates", "law_replicates"):
                if getattr(args, key) is not None:
                    cfg.set("simulate", key, getattr(args, key))
            if args.mode:
                cfg.set("run", "mode", args.mode)
        if args.command == "show-config":
            print(cfg.to_ini())
            return 0
        stages = (args.stages.split(",") if args.command == "pipeline" else [args.command])
        status, manifest = run_pipeline(stages=[s.strip() for s in stages if s.strip()],
                                        out=args.out, seed=args.seed, workers=args.workers,
                                        strict=args.strict, force=args.force, cfg=cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except HomogenizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    out = Path(args.out)
    if (out / "verify" / "report.txt").exists() and "verify" in manifest["stages"]:
        if args.command in ("verify", "pipeline"):
            print((out / "verify" / "report.txt").read_text(), end="")
    print(f"manifest: {out / 'manifest.json'} (config hash {manifest['config_hash'][:12]})")
    return status


if __name__ == "__main__":
    sys.exit(main())
