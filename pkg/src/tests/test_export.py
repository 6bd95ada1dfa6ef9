import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from src.models.paths import PathBundle, TimeGrid
from src.schemas.config import GammaEstimatorConfig
from src.schemas.report import GammaDiagnostic, TestReport, Verdict
from src.services.builders import gaussian_init, identity_sigma, zero_drift
from src.services.export import (
    QUANTILES,
    bundle_frame,
    ensemble_csv,
    file_digest,
    marginals_frame,
    read_pbnd,
    root_marginals,
    write_diagnostics_jsonl,
    write_paths_csv,
    write_pbnd,
    write_report_json,
)
from src.services.local_equation import solve_local_regular
from src.utils.errors import InvalidArgumentError


@pytest.fixture
def bundle():
    """Three vertices, two coordinates, one frozen row"""
    grid = TimeGrid(1.0, 4)
    states = np.random.default_rng(0).normal(size=(3, 5, 2))
    return PathBundle(
        grid=grid,
        states=states,
        membership=np.array([True, True, False]),
        names=["o", "1", "1.1"],
    )


def test_bundle_frame_columns(bundle):
    """Test column order and row layout of the long table"""
    frame = bundle_frame(bundle)
    assert list(frame.columns) == ["vertex_label", "time", "coord_0", "coord_1", "member"]
    assert len(frame) == 15
    assert list(frame["vertex_label"][:5]) == ["o"] * 5
    assert frame["time"].iloc[4] == 1.0
    assert list(frame["member"][::5]) == [1, 1, 0]
    assert frame["coord_1"].iloc[6] == bundle.states[1, 1, 1]

    tagged = bundle_frame(bundle, replica=7)
    assert tagged.columns[0] == "replica"
    assert set(tagged["replica"]) == {7}


def test_paths_csv_is_reproducible(bundle, tmp_path):
    """Test that two writes of the same bundle are byte-identical"""
    a = write_paths_csv(bundle, tmp_path / "a.csv")
    b = write_paths_csv(bundle, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    back = pd.read_csv(a, float_precision="round_trip")
    assert np.array_equal(back["coord_0"].to_numpy(), bundle.states[:, :, 0].ravel())


def test_paths_csv_with_replicas(bundle, tmp_path):
    """Test that a list of bundles gets a replica column"""
    path = write_paths_csv([bundle, bundle], tmp_path / "paths.csv")
    frame = pd.read_csv(path)
    assert list(frame["replica"].unique()) == [0, 1]
    assert len(frame) == 30


def test_pbnd_file(bundle, tmp_path):
    """Test the binary bundle layout and reading it back"""
    path = write_pbnd(bundle, tmp_path / "paths.pbnd")
    raw = path.read_bytes()
    assert raw[:5] == b"PBND1"
    back = read_pbnd(path)
    assert back.names == bundle.names
    assert np.array_equal(back.states, bundle.states)
    assert np.array_equal(back.membership, bundle.membership)
    assert back.grid == bundle.grid


def test_pbnd_rejects_other_files(tmp_path):
    """Test the magic check"""
    path = tmp_path / "other.bin"
    path.write_bytes(b"NOTPB" + bytes(32))
    with pytest.raises(InvalidArgumentError):
        read_pbnd(path)


def test_ensemble_csv(tmp_path):
    """Test the local ensemble written in the bundle schema"""
    ens = solve_local_regular(
        2, zero_drift(), identity_sigma(), gaussian_init(), 20, TimeGrid(0.5, 2),
        GammaEstimatorConfig(), 3,
    )
    frame = pd.read_csv(ensemble_csv(ens, tmp_path / "paths.csv"))
    assert list(frame.columns) == ["replica", "vertex_label", "time", "coord_0", "member"]
    assert frame["replica"].nunique() == 20
    assert set(frame["vertex_label"].astype(str)) == {"o", "1", "2"}
    assert len(frame) == 20 * 3 * 3


def test_marginals_frame():
    """Test counts, moments and quantiles per time and coordinate"""
    sample = np.arange(1.0, 101.0)[:, None]
    frame = marginals_frame([(0.5, sample, None)], "root")
    row = frame.iloc[0]
    assert row["group"] == "root" and row["count"] == 100
    assert row["mean"] == 50.5
    assert row["q50"] == 50.0
    assert [c for c in frame.columns if c.startswith("q")] == [
        f"q{int(q * 100):02d}" for q in QUANTILES
    ]

    weighted = marginals_frame([(0.0, np.array([[0.0], [1.0]]), np.array([3.0, 1.0]))])
    assert weighted.iloc[0]["mean"] == 0.25


def test_root_marginals():
    """Test one row per grid time for a one-dimensional root sample"""
    grid = TimeGrid(1.0, 3)
    frame = root_marginals(np.zeros((10, 4, 1)), grid)
    assert list(frame["time"]) == list(grid.times)
    assert np.all(frame["std"] == 0.0)


def test_diagnostics_and_report(tmp_path):
    """Test the JSON-lines diagnostics and the report file"""
    diagnostics = [
        GammaDiagnostic(
            step=j, time=0.1 * j, queries=10, design_size=10, mean_stratum_size=10.0, fallbacks=0
        )
        for j in range(3)
    ]
    lines = write_diagnostics_jsonl(diagnostics, tmp_path / "d.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[2])["step"] == 2

    report = TestReport(name="size-bias", statistic=0.0, verdict=Verdict.PASS)
    loaded = json.loads(write_report_json(report, tmp_path / "report.json").read_text())
    assert loaded["verdict"] == "pass"


def test_file_digest(tmp_path):
    """Test sha256, size and the relative path of an output file"""
    path = tmp_path / "sub" / "x.txt"
    path.parent.mkdir()
    path.write_bytes(b"abc")
    entry = file_digest(path, tmp_path)
    assert entry.path == "sub/x.txt"
    assert entry.sha256 == hashlib.sha256(b"abc").hexdigest()
    assert entry.bytes == 3
