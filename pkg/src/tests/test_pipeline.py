import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

import json

import numpy as np
import pytest

from src.models.coefficients import DriftSpec
from src.schemas.report import Verdict
from src.services import pipeline
from src.services.pipeline import (
    EXIT_CONFIG,
    EXIT_ERROR,
    EXIT_OK,
    LOCK_NAME,
    config_digest,
    parse_config,
    resolve,
    run,
)
from src.utils.errors import ConfigError, RunLockedError


MINIMAL = """
# one line per key
kind=simulate-graph
model=regular
n=20
kappa=3
drift=ou-pairwise
drift.beta=0.5
T=0.5
K=5
seed=11
"""


def _config(text: str, out, **overrides):
    values = {"out": str(out)}
    values.update(overrides)
    return parse_config(text, values)


def test_parse_minimal_config():
    """Test that keys land in their sections with the right types"""
    config = parse_config(MINIMAL)
    assert config.kind == "simulate-graph"
    assert config.model.name == "regular" and config.model.kappa == 3
    assert config.coefficients.drift_params == {"beta": 0.5}
    assert config.grid.K == 5
    assert config.seed == 11
    assert config.warnings == []


def test_seed_is_required():
    """Test that a config without seed is refused"""
    with pytest.raises(ConfigError) as info:
        parse_config("kind=solve-local\nmodel=ugw\n")
    assert info.value.key == "seed"
    assert "seed required" in str(info.value)


def test_seed_override():
    """Test that command-line values win over the file"""
    config = parse_config(MINIMAL, {"seed": "99"})
    assert config.seed == 99


@pytest.mark.parametrize(
    "text,key",
    [
        ("kind=verify\nseed=1\ncolour=red\n", "colour"),
        ("kind=verify\ncheck=size-bias\nseed=1\nseed=2\n", "seed"),
        ("kind=verify\ncheck=size-bias\nseed=1\nnot a pair\n", "line 4"),
        ("kind=solve-local\nseed=1\ndrift=no-such-drift\n", "drift"),
        ("kind=solve-local\nseed=1\nT=-1\n", "T"),
        ("kind=verify\nseed=1\n", "check"),
        ("kind=verify\ncheck=no-such-check\nseed=1\n", "check"),
        ("kind=simulate-graph\nmodel=er\nseed=1\n", "p"),
        ("kind=solve-local\nseed=1\ndrift=ou-pairwise\ndrift.gamma=2\n", "drift"),
        ("kind=solve-local\nmodel=ugw\nrho=delta\nrho.k=-1\nseed=1\n", "rho.k"),
    ],
)
def test_config_errors_name_the_key(text, key):
    """Test that every configuration error names the offending key"""
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_explicit_pmf_is_renormalized_with_warning():
    """Test an explicit pmf that does not sum to one"""
    config = parse_config(
        "kind=solve-local\nmodel=ugw\nrho=explicit\nrho.pmf=0.5,0.3,0.18\nseed=3\n"
    )
    assert config.model.rho.pmf == [0.5, 0.3, 0.18]
    assert len(config.warnings) == 1
    assert "renormalized" in config.warnings[0]
    law = resolve(config).rho
    assert abs(sum(law.pmf) - 1.0) < 1e-12


def test_config_digest_ignores_output_directory(tmp_path):
    """Test that the digest depends on the config but not on out"""
    a = _config(MINIMAL, tmp_path / "a")
    b = _config(MINIMAL, tmp_path / "b")
    c = _config(MINIMAL, tmp_path / "a", seed="12")
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(c)


def test_verify_run_writes_report(tmp_path):
    """Test a verify run end to end: report, manifest and digests"""
    text = "kind=verify\ncheck=reweight-identity\nmodel=ugw\nrho=delta\nrho.k=3\nseed=5\n"
    manifest = run(_config(text, tmp_path), catalog=False)
    assert manifest.exit_status == EXIT_OK
    assert manifest.verdict == Verdict.PASS

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["name"] == "reweight-identity"
    assert report["seeds"] == [5]
    assert report["config_digest"] == manifest.config_digest

    written = json.loads((tmp_path / "manifest.json").read_text())
    assert [f["path"] for f in written["files"]] == ["report.json"]
    assert not (tmp_path / LOCK_NAME).exists()


def test_simulate_graph_is_reproducible(tmp_path):
    """Test that two runs of the same config write identical files"""
    first = run(_config(MINIMAL, tmp_path / "a"), catalog=False)
    second = run(_config(MINIMAL, tmp_path / "b"), catalog=False)
    assert first.exit_status == second.exit_status == EXIT_OK
    assert first.verdict is None
    for name in ("graph.txt", "paths.csv", "marginals.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert [f.sha256 for f in first.files] == [f.sha256 for f in second.files]


def test_solve_local_writes_diagnostics(tmp_path):
    """Test one diagnostics line per time step"""
    text = "kind=solve-local\nmodel=regular-tree\nkappa=3\nM=30\nT=0.5\nK=4\nseed=2\n"
    manifest = run(_config(text, tmp_path), catalog=False)
    assert manifest.exit_status == EXIT_OK
    lines = (tmp_path / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert {f.path for f in manifest.files} == {"paths.csv", "marginals.csv", "diagnostics.jsonl"}


def test_run_needing_a_graph_reports_config_status(tmp_path):
    """Test that a graph check on a tree model ends with the config exit status"""
    text = "kind=verify\ncheck=chaos\nmodel=ugw\nseed=1\n"
    manifest = run(_config(text, tmp_path), catalog=False)
    assert manifest.exit_status == EXIT_CONFIG
    assert any("model" in w for w in manifest.warnings)
    assert (tmp_path / "manifest.json").exists()


def test_locked_output_directory(tmp_path):
    """Test that a second run cannot share an output directory"""
    (tmp_path / LOCK_NAME).write_text("1234")
    with pytest.raises(RunLockedError):
        run(_config(MINIMAL, tmp_path), catalog=False)
    assert (tmp_path / LOCK_NAME).exists()


LOUD = DriftSpec(
    name="loud",
    empty_case=lambda t, x: np.full_like(x[:, -1, :], 100.0),
    pair=lambda t, x, y: np.full_like(x[:, -1, :], 100.0),
    growth_const=1.0,
)


def test_contracts_pass_for_registered_coefficients(tmp_path):
    """Test that contracts=true leaves a valid run and its digest unchanged"""
    plain = _config(MINIMAL, tmp_path / "a")
    checked = _config(MINIMAL + "contracts=true\n", tmp_path / "b")
    assert checked.contracts and not plain.contracts
    assert config_digest(plain) == config_digest(checked)
    manifest = run(checked, catalog=False)
    assert manifest.exit_status == EXIT_OK


def test_contract_violation_ends_with_error_status(tmp_path, monkeypatch):
    """Test that a drift above its growth bound fails the run when contracts are on"""
    config = _config(MINIMAL + "contracts=true\n", tmp_path)
    monkeypatch.setattr(pipeline, "build_drift", lambda *args: LOUD)
    manifest = run(config, catalog=False)
    assert manifest.exit_status == EXIT_ERROR
    assert any("linear-growth" in w for w in manifest.warnings)
    assert (tmp_path / "manifest.json").exists()


def test_growth_is_asserted_during_simulation(tmp_path, monkeypatch):
    """Test that contracts=true also checks the growth bound at every integration step"""
    config = _config(MINIMAL + "contracts=true\n", tmp_path)
    monkeypatch.setattr(pipeline, "build_drift", lambda *args: LOUD)
    monkeypatch.setattr(pipeline, "check_drift_contract", lambda *args: None)
    manifest = run(config, catalog=False)
    assert manifest.exit_status == EXIT_ERROR
    assert any("linear-growth bound at step 0" in w for w in manifest.warnings)


def test_unexpected_error_still_writes_manifest(tmp_path, monkeypatch):
    """Test that a non-library exception is recorded in the manifest and re-raised"""

    def broken(resolved, out):
        raise RuntimeError("degenerate design")

    monkeypatch.setitem(pipeline.KINDS, "simulate-graph", broken)
    with pytest.raises(RuntimeError):
        run(_config(MINIMAL, tmp_path), catalog=False)

    written = json.loads((tmp_path / "manifest.json").read_text())
    assert written["exit_status"] == EXIT_ERROR
    assert any(w.startswith("internal error") for w in written["warnings"])
    assert not (tmp_path / LOCK_NAME).exists()
