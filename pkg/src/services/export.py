"""Writers for path bundles, ensembles, marginals, diagnostics and reports.

CSV files go through pandas with a fixed float format and column order so a
rerun with the same config and seed reproduces them byte for byte.

Binary bundles ("PBND1") are little-endian:

    magic      5 bytes   b"PBND1"
    n, K+1, d  3 x uint32
    horizon    float64
    names      n x (uint16 length, utf-8 bytes)
    membership n x uint8
    states     n * (K+1) * d x float64, row-major (vertex, step, coord)
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.models.ensemble import LocalEnsemble, TreeRun
from src.models.paths import PathBundle, TimeGrid
from src.schemas.report import GammaDiagnostic, OutputFile, TestReport
from src.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
MAGIC = b"PBND1"

PathLike = Union[str, Path]


def bundle_frame(bundle: PathBundle, replica: Optional[int] = None) -> pd.DataFrame:
    """Long table: one row per (vertex, time) with coord_0..coord_{d-1} and member"""
    n, steps, dim = bundle.states.shape
    data = {}
    if replica is not None:
        data["replica"] = np.full(n * steps, replica, dtype=np.int64)
    data["vertex_label"] = np.repeat(np.asarray(bundle.names, dtype=object), steps)
    data["time"] = np.tile(bundle.grid.times, n)
    flat = bundle.states.reshape(n * steps, dim)
    for c in range(dim):
        data[f"coord_{c}"] = flat[:, c]
    data["member"] = np.repeat(bundle.membership.astype(np.int8), steps)
    return pd.DataFrame(data)


def write_paths_csv(bundles: Union[PathBundle, Sequence[PathBundle]], path: PathLike) -> Path:
    """One bundle, or several tagged with a replica column"""
    if isinstance(bundles, PathBundle):
        frame = bundle_frame(bundles)
    else:
        frame = pd.concat([bundle_frame(b, r) for r, b in enumerate(bundles)], ignore_index=True)
    return _write_csv(frame, path)


def tree_runs_csv(runs: Sequence[TreeRun], path: PathLike) -> Path:
    return write_paths_csv([run.bundle for run in runs], path)


def ensemble_csv(ensemble: LocalEnsemble, path: PathLike) -> Path:
    """Local ensemble in the bundle schema, slots named o, 1, 2, ..."""
    frames = [bundle_frame(ensemble.as_bundle(m), m) for m in range(ensemble.replicas)]
    return _write_csv(pd.concat(frames, ignore_index=True), path)


def marginals_frame(samples_by_time: Iterable, label: str = "all") -> pd.DataFrame:
    """Summary of the sample at each grid time: count, mean, std and quantiles per coordinate.

    `samples_by_time` yields (time, sample (m, d), weights or None).
    """
    rows = []
    for t, sample, weights in samples_by_time:
        sample = np.asarray(sample, dtype=float)
        for c in range(sample.shape[1]):
            x = sample[:, c]
            w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
            mean = float(np.average(x, weights=w))
            std = float(np.sqrt(np.average((x - mean) ** 2, weights=w)))
            row = {"group": label, "time": t, "coord": c, "count": int(x.size)}
            row.update(mean=mean, std=std)
            order = np.argsort(x, kind="stable")
            cum = np.cumsum(w[order]) / w.sum()
            for q in QUANTILES:
                idx = min(int(np.searchsorted(cum, q, side="left")), x.size - 1)
                row[f"q{int(q * 100):02d}"] = float(x[order][idx])
            rows.append(row)
    return pd.DataFrame(rows)


def write_marginals_csv(frames: Sequence[pd.DataFrame], path: PathLike) -> Path:
    return _write_csv(pd.concat(list(frames), ignore_index=True), path)


def bundle_marginals(bundle: PathBundle, members_only: bool = True) -> pd.DataFrame:
    rows = np.flatnonzero(bundle.membership) if members_only else np.arange(bundle.n)
    return marginals_frame(
        ((t, bundle.states[rows, j], None) for j, t in enumerate(bundle.grid.times)),
        "vertices",
    )


def root_marginals(root_states: np.ndarray, grid: TimeGrid, label: str = "root") -> pd.DataFrame:
    """root_states has shape (replicas, K+1, d)"""
    return marginals_frame(
        ((t, root_states[:, j], None) for j, t in enumerate(grid.times)), label
    )


def write_diagnostics_jsonl(diagnostics: Sequence[GammaDiagnostic], path: PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for item in diagnostics:
            f.write(item.model_dump_json() + "\n")
    return path


def write_report_json(report: TestReport, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def write_pbnd(bundle: PathBundle, path: PathLike) -> Path:
    path = Path(path)
    n, steps, dim = bundle.states.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIId", n, steps, dim, bundle.grid.horizon))
        for name in bundle.names:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
        f.write(bundle.membership.astype("u1").tobytes())
        f.write(np.ascontiguousarray(bundle.states, dtype="<f8").tobytes())
    return path


def read_pbnd(path: PathLike) -> PathBundle:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise InvalidArgumentError(f"{path} is not a PBND1 file")
    offset = len(MAGIC)
    n, steps, dim, horizon = struct.unpack_from("<IIId", raw, offset)
    offset += struct.calcsize("<IIId")
    names: List[str] = []
    for _ in range(n):
        (length,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        names.append(raw[offset : offset + length].decode("utf-8"))
        offset += length
    membership = np.frombuffer(raw, dtype="u1", count=n, offset=offset).astype(bool)
    offset += n
    states = np.frombuffer(raw, dtype="<f8", count=n * steps * dim, offset=offset)
    return PathBundle(
        grid=TimeGrid(horizon, steps - 1),
        states=states.reshape(n, steps, dim).copy(),
        membership=membership,
        names=names,
    )


def file_digest(path: PathLike, root: Optional[PathLike] = None) -> OutputFile:
    """sha256 and size of an emitted file, path relative to `root`"""
    path = Path(path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    shown = path.relative_to(root) if root is not None else path
    return OutputFile(path=shown.as_posix(), sha256=digest, bytes=path.stat().st_size)


def _write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path
