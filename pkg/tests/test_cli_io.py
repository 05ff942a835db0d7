import csv
import json
import subprocess
import sys

import pytest
from filelock import FileLock

from riskaverse import ValidationError
from riskaverse.cli import main
from riskaverse.config import config_hash, dump_config, reference_config, validate_config
from riskaverse.io import check_result, emit_report, verify_manifest


@pytest.fixture
def ref_path(tmp_path):
    p = tmp_path / "ref.json"
    p.write_text(json.dumps(reference_config()))
    return p


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_simulate_writes_paths_moments_and_verified_manifest(ref_path, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(ref_path), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.json", "manifest.json", "moments.json", "paths.csv"]
    assert verify_manifest(out)
    header = next(csv.reader(open(out / "paths.csv")))
    assert header == ["path", "step", "t", "x_1"]
    manifest = json.load(open(out / "manifest.json"))
    assert manifest["subcommand"] == "simulate"
    assert "simulate" in manifest["timings_seconds"]


def test_tampered_artifact_fails_verification(ref_path, tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--config", str(ref_path), "--out", str(out)])
    with open(out / "moments.json", "a") as fh:
        fh.write(" ")
    assert not verify_manifest(out)


def test_missing_diffusion_exits_2_naming_path(tmp_path, capsys):
    cfg = reference_config()
    del cfg["model"]["diffusion"]
    p = write_cfg(tmp_path, cfg)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    diag = json.loads(capsys.readouterr().err)
    assert diag["path"] == "model.diffusion"
    assert not (tmp_path / "o").exists()


def test_console_script_exit_code(tmp_path):
    cfg = reference_config()
    del cfg["model"]["diffusion"]
    p = write_cfg(tmp_path, cfg)
    proc = subprocess.run([sys.executable, "-m", "riskaverse.cli", "simulate", "--config", str(p)],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
    assert "model.diffusion" in proc.stderr


@pytest.mark.parametrize("mutate, path", [
    (lambda c: c.update(seed="1"), "seed"),
    (lambda c: c["grids"]["time"].update(steps=2.5), "grids.time.steps"),
    (lambda c: c.update(extra=1), "extra"),
    (lambda c: c.update(K={"kind": "box", "lo": [0, 0], "hi": [1, 1]}), "K"),
])
def test_validation_paths(mutate, path):
    cfg = reference_config()
    mutate(cfg)
    with pytest.raises(ValidationError) as exc:
        validate_config(cfg)
    assert exc.value.path == path


def test_seed_flag_beats_environment(ref_path, tmp_path, monkeypatch):
    monkeypatch.setenv("RISKAVERSE_SEED", "5")
    main(["simulate", "--config", str(ref_path), "--out", str(tmp_path / "env")])
    main(["simulate", "--config", str(ref_path), "--out", str(tmp_path / "flag"), "--seed", "6"])
    assert json.load(open(tmp_path / "env" / "config.json"))["seed"] == 5
    assert json.load(open(tmp_path / "flag" / "config.json"))["seed"] == 6


def test_environment_supplies_config(ref_path, tmp_path, monkeypatch):
    monkeypatch.setenv("RISKAVERSE_CONFIG", str(ref_path))
    assert main(["viability", "--out", str(tmp_path / "v")]) == 0


def test_locked_output_is_refused(ref_path, tmp_path, capsys):
    out = tmp_path / "busy"
    with FileLock(str(out) + ".lock"):
        assert main(["simulate", "--config", str(ref_path), "--out", str(out)]) == 2
    assert "locked" in capsys.readouterr().err
    assert not out.exists()


def _leftovers(tmp_path):
    return sorted(x.name for x in tmp_path.iterdir() if not x.name.endswith(".lock"))


def test_failure_leaves_no_partial_directory(tmp_path):
    cfg = reference_config()
    del cfg["costs"]
    p = write_cfg(tmp_path, cfg)
    assert main(["equilibrium", "--config", str(p), "--out", str(tmp_path / "eq")]) == 2
    assert _leftovers(tmp_path) == ["cfg.json"]


def test_numerical_failure_mid_run_exits_3(tmp_path, capsys):
    cfg = reference_config()
    cfg.setdefault("solver", {})["cfl"] = "refuse"
    p = write_cfg(tmp_path, cfg)
    assert main(["solve-hjb", "--config", str(p), "--out", str(tmp_path / "hjb")]) == 3
    diag = json.loads(capsys.readouterr().err)
    assert diag["details"]["required_time_steps"] > cfg["grids"]["hjb"]["time_steps"]
    assert _leftovers(tmp_path) == ["cfg.json"]


def test_rerun_replaces_previous_output(ref_path, tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--config", str(ref_path), "--out", str(out)])
    (out / "stale.txt").write_text("x")
    main(["simulate", "--config", str(ref_path), "--out", str(out)])
    assert not (out / "stale.txt").exists()


@pytest.mark.parametrize("command, files", [
    ("solve-bsde", {"bsde.json", "bsde_agent0.csv"}),
    ("risk-axioms", {"axioms.json"}),
    ("viability", {"viability.json"}),
    ("bsvp", {"bsvp.json"}),
    ("solve-hjb", {"hjb.json", "value.csv", "policy.csv"}),
    ("equilibrium", {"equilibrium.json", "policy.csv"}),
    ("frontier", {"frontier.json", "frontier.csv"}),
])
def test_subcommands_on_reference_config(ref_path, tmp_path, command, files):
    out = tmp_path / command
    assert main([command, "--config", str(ref_path), "--out", str(out)]) == 0
    assert files <= {p.name for p in out.iterdir()}
    assert verify_manifest(out)


def test_frontier_csv_header(ref_path, tmp_path):
    out = tmp_path / "f"
    main(["frontier", "--config", str(ref_path), "--out", str(out)])
    rows = list(csv.reader(open(out / "frontier.csv")))
    assert rows[0] == ["alpha_1", "rho_1", "pareto_flag", "iterations", "converged"]
    assert rows[1][0] == "1.0"


def test_config_dump_is_canonical():
    cfg = reference_config()
    text = dump_config(cfg)
    assert dump_config(json.loads(text)) == text
    assert config_hash(json.loads(text)) == config_hash(cfg)


def test_report_single_pass():
    report, text = emit_report([check_result("a", True, 1.0, 2.0)])
    assert report["status"] == "pass"
    assert report["counts"] == {"passed": 1, "total": 1}
    assert text.startswith("overall: pass (1/1 passed)")


def test_report_failures_first():
    report, text = emit_report([check_result("ok", True), check_result("bad", False, 3.0, 1.0),
                                check_result("ok2", True)])
    assert report["status"] == "fail"
    assert [c["name"] for c in report["checks"]] == ["bad", "ok", "ok2"]
    lines = text.splitlines()
    assert lines[3].startswith("bad")


def test_report_omits_empty_sections():
    report, _ = emit_report([check_result("a", True, details={})])
    check = report["checks"][0]
    assert "details" not in check and "value" not in check and "tolerance" not in check
    assert "null" not in json.dumps(report)


def test_report_needs_results():
    with pytest.raises(ValidationError):
        emit_report([])
