import json
import shutil

import pytest

from nlhomog.cli import OrderingError, main, run_pipeline
from nlhomog.config import load_config

SMALL = """
[run]
seed = 5
[effective]
s_prod = 4000
[simulate]
eps = 0.2, 0.1
T = 0.25
replicates = 2
law_replicates = 2
snapshots = 4
[clt]
eps = 0.1
T = 0.25
replicates = 100
[spde]
samples = 20
[verify]
residual = false
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    status, manifest = run_pipeline(cfg=load_config(text=SMALL), out=out)
    return out, status, json.loads(json.dumps(manifest))


def test_validate_only(tmp_path, capsys):
    code = main(["--out", str(tmp_path), "validate"])
    assert code == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert list(m["stages"]) == ["validate"]
    hyp = json.loads((tmp_path / "validate" / "hypotheses.json").read_text())
    assert hyp["hypotheses"]["H2"]["status"] == "pass"


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nseed = x\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "validate"]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["--out", str(tmp_path), "pipeline", "--stages", "bogus"]) == 2


def test_environment_variable_override(tmp_path, monkeypatch):
    monkeypatch.setenv("NLHOMOG_SEED", "17")
    assert main(["--out", str(tmp_path), "validate"]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["run"]["seed"] == 17


def test_show_config(capsys):
    assert main(["show-config"]) == 0
    assert "[simulate]" in capsys.readouterr().out


def test_small_pipeline_runs_every_stage(small_run):
    out, status, manifest = small_run
    assert status in (0, 1)
    assert manifest["stage_order"] == ["validate", "correctors", "effective", "simulate", "clt",
                                       "spde", "verify"]
    for rec in manifest["stages"].values():
        for f, digest in rec["digests"].items():
            assert (out / f).exists()
    report = json.loads((out / "verify" / "report.json").read_text())
    assert report["meta"]["config_hash"] == manifest["config_hash"]
    assert any("law checks" in s for s in report["meta"]["skipped"])


def test_rerun_skips_every_stage(small_run):
    out, _, manifest = small_run
    _, again = run_pipeline(cfg=load_config(text=SMALL), out=out)
    for stage, rec in manifest["stages"].items():
        assert again["stages"][stage]["started"] == rec["started"]
        assert again["stages"][stage]["digests"] == rec["digests"]


def test_deleted_output_reruns_stage_and_dependents(small_run, tmp_path):
    src, _, manifest = small_run
    out = tmp_path / "copy"
    shutil.copytree(src, out)
    (out / "spde" / "moments.json").unlink()
    _, again = run_pipeline(cfg=load_config(text=SMALL), out=out)
    for stage in ("validate", "correctors", "effective", "simulate", "clt"):
        assert again["stages"][stage]["started"] == manifest["stages"][stage]["started"]
    assert again["stages"]["spde"]["digests"] == manifest["stages"]["spde"]["digests"]
    assert again["stages"]["verify"]["digests"] == manifest["stages"]["verify"]["digests"]
    assert (out / "spde" / "moments.json").exists()


def test_changed_section_invalidates_downstream_only(small_run, tmp_path):
    src, _, manifest = small_run
    out = tmp_path / "copy"
    shutil.copytree(src, out)
    _, again = run_pipeline(cfg=load_config(text=SMALL.replace("samples = 20", "samples = 30")),
                            out=out)
    for stage in ("validate", "correctors", "effective", "simulate", "clt"):
        assert again["stages"][stage]["hash"] == manifest["stages"][stage]["hash"]
        assert again["stages"][stage]["started"] == manifest["stages"][stage]["started"]
    assert again["stages"]["spde"]["hash"] != manifest["stages"]["spde"]["hash"]


def test_stage_without_prerequisites_reports_ordering(tmp_path):
    from nlhomog.cli import Context, run_stage
    ctx = Context(load_config(text=SMALL), tmp_path)
    ctx.report = None
    with pytest.raises(OrderingError):
        run_stage(ctx, "spde")


def test_worker_pool_gives_identical_payloads(small_run, tmp_path):
    src, _, manifest = small_run
    out = tmp_path / "pool"
    shutil.copytree(src, out)
    _, again = run_pipeline(cfg=load_config(text=SMALL), out=out, stages=["clt"], workers=2,
                            force=True)
    assert again["stages"]["clt"]["started"] >= manifest["stages"]["clt"]["started"]
    assert again["stages"]["clt"]["digests"] == manifest["stages"]["clt"]["digests"]
