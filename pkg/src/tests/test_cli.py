import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

os.environ["DATABASE_URL"] = "sqlite://"

import json
from datetime import datetime, timezone

import pytest

from src.main import EXIT_CONFIG, main
from src.schemas.report import RunManifest, TestReport, Verdict
from src.services.pipeline import record_run


@pytest.fixture
def size_bias_config(tmp_path):
    """Config file for an exact size-bias verification"""
    path = tmp_path / "run.cfg"
    path.write_text("model=ugw\nrho=poisson\nrho.theta=2\nseed=1\n")
    return path


def test_list_builders(capsys):
    """Test the builder listing"""
    assert main(["list-builders"]) == 0
    out = capsys.readouterr().out
    assert "ou-pairwise" in out
    assert "identity" in out


def test_verify_from_config_file(size_bias_config, tmp_path, capsys):
    """Test a verify run driven by a config file and flags"""
    out_dir = tmp_path / "out"
    status = main(
        [
            "verify",
            "size-bias",
            "--config",
            str(size_bias_config),
            "--out",
            str(out_dir),
            "--no-catalog",
        ]
    )
    assert status == 0
    assert "pass" in capsys.readouterr().out
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["check"] == "size-bias"
    assert manifest["config"]["seed"] == 1


def test_missing_seed_exits_with_config_status(tmp_path):
    """Test that a config error maps to exit status 2"""
    status = main(["solve-local", "--out", str(tmp_path), "--no-catalog"])
    assert status == EXIT_CONFIG


def test_catalog_records_runs(size_bias_config, tmp_path, capsys):
    """Test that a cataloged run shows up in list-runs"""
    status = main(
        ["verify", "size-bias", "--config", str(size_bias_config), "--out", str(tmp_path / "c")]
    )
    assert status == 0
    run_line = capsys.readouterr().out.splitlines()[0]
    run_id = run_line.split(":")[0]

    assert main(["list-runs", "--kind", "verify"]) == 0
    listing = capsys.readouterr().out
    assert run_id in listing
    assert "size-bias" in listing


def _cataloged_run(config_path, out_dir, capsys) -> str:
    assert main(["verify", "size-bias", "--config", str(config_path), "--out", str(out_dir)]) == 0
    return capsys.readouterr().out.splitlines()[0].split(":")[0]


def test_list_runs_by_digest(size_bias_config, tmp_path, capsys):
    """Test that list-runs filters on the resolved config digest"""
    run_id = _cataloged_run(size_bias_config, tmp_path / "d", capsys)
    digest = json.loads((tmp_path / "d" / "manifest.json").read_text())["config_digest"]

    assert main(["list-runs", "--digest", digest]) == 0
    listing = capsys.readouterr().out
    assert run_id in listing
    assert "in catalog" in listing.splitlines()[-1]

    assert main(["list-runs", "--digest", "0" * 64]) == 0
    assert "no runs recorded" in capsys.readouterr().out


def test_show_run_lists_files_and_reports(size_bias_config, tmp_path, capsys):
    """Test that show-run prints the catalog entry with its report"""
    run_id = _cataloged_run(size_bias_config, tmp_path / "s", capsys)

    assert main(["show-run", run_id]) == 0
    shown = capsys.readouterr().out
    assert run_id in shown
    assert "report.json" in shown
    assert "report   size-bias  pass" in shown


def test_show_unknown_run(capsys):
    """Test that an unknown run id is an error"""
    assert main(["show-run", "no-such-run"]) == 1


def test_list_failures(tmp_path, capsys):
    """Test that failed reports are listed with their run"""
    manifest = RunManifest(
        run_id="failing-mass-transport",
        kind="verify",
        check="mass-transport",
        config={"seed": 3},
        config_digest="f" * 64,
        tool_version="test",
        started_at=datetime.now(timezone.utc),
        verdict=Verdict.FAIL,
        exit_status=3,
    )
    report = TestReport(name="mass-transport", statistic=0.5, threshold=0.1, verdict=Verdict.FAIL)
    record_run(manifest, tmp_path, report, None)

    assert main(["list-failures"]) == 0
    listing = capsys.readouterr().out
    assert "failing-mass-transport" in listing
    assert "mass-transport" in listing
