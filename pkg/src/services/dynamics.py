import logging
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from src.models.coefficients import DiffusionSpec, DriftSpec, InitialLaw
from src.models.ensemble import TreeRun
from src.models.paths import PathBundle, TimeGrid
from src.models.topology import FiniteGraph, Frame, OffspringLaw, SampledTree
from src.schemas.report import TestReport, Verdict
from src.services.builders import zero_drift
from src.services.contracts import assert_linear_growth
from src.services.topology import sample_ugw
from src.utils import rng
from src.utils.errors import DivergedError
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e10
TREE_BATCH = 64


def member_csr(frame: Frame, rows: np.ndarray):
    """Neighbor lists of the given rows as (indptr, indices)"""
    degrees = frame.degrees()[rows]
    indptr = np.zeros(rows.size + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(degrees)
    if rows.size and indptr[-1]:
        indices = np.concatenate([frame.neighbors(v) for v in rows])
    else:
        indices = np.zeros(0, dtype=np.int64)
    return indptr, indices


def draw_inputs(frame: Frame, init: InitialLaw, grid: TimeGrid, seed: int, prefix=()):
    """Initial states for every vertex and noise blocks for the members"""
    x0 = init.sample(seed, frame.keys, prefix)
    members = np.flatnonzero(frame.membership)
    xi = rng.normals(seed, rng.NOISE, frame.keys[members], (grid.steps, init.dim), prefix)
    return x0, xi


def integrate(
    frame: Frame,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    grid: TimeGrid,
    x0: np.ndarray,
    xi: np.ndarray,
    check_growth: bool = False,
) -> np.ndarray:
    """Euler-Maruyama on a frame; non-members keep their initial state.

    x0 is (n, d); xi is (members, K, d). Returns states (n, K+1, d).
    With check_growth the linear-growth bound of the drift is asserted each step.
    """
    n, dim = x0.shape
    states = np.empty((n, grid.steps + 1, dim))
    states[:, 0] = x0
    members = np.flatnonzero(frame.membership)
    frozen = np.flatnonzero(~frame.membership)
    states[frozen] = x0[frozen, None, :]
    indptr, indices = member_csr(frame, members)
    h = grid.h
    root_h = np.sqrt(h)

    for j in range(grid.steps):
        t = grid.time(j)
        b = drift.evaluate(j, t, states, members, indptr, indices)
        if check_growth:
            assert_linear_growth(drift, j, states, members, indptr, indices, b)
        noise = diffusion.apply(j, t, states, members, xi[:, j, :])
        nxt = states[members, j] + b * h + root_h * noise
        if not np.all(np.isfinite(nxt)) or np.any(np.abs(nxt) > DIVERGENCE_BOUND):
            raise DivergedError(j + 1)
        states[members, j + 1] = nxt
    return states


def _frame_of(topology: Union[SampledTree, FiniteGraph, Frame]) -> Frame:
    if isinstance(topology, Frame):
        return topology
    return topology.frame()


def simulate_system(
    topology: Union[SampledTree, FiniteGraph, Frame],
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    grid: TimeGrid,
    seed: int,
    check_growth: bool = False,
) -> PathBundle:
    """Simulate the interacting system on a tree or a finite graph"""
    frame = _frame_of(topology)
    logger.info(
        f"Simulating {drift.name}/{diffusion.name} on {frame.n} vertices, {grid.steps} steps"
    )
    x0, xi = draw_inputs(frame, init, grid, seed)
    states = integrate(frame, drift, diffusion, grid, x0, xi, check_growth)
    return PathBundle(
        grid=grid, states=states, membership=frame.membership.copy(), names=frame.names, frame=frame
    )


def simulate_driftless(
    topology: Union[SampledTree, FiniteGraph, Frame],
    diffusion: DiffusionSpec,
    init: InitialLaw,
    grid: TimeGrid,
    seed: int,
) -> PathBundle:
    """Reference system with b = 0; shares the engine and the noise of simulate_system"""
    return simulate_system(topology, zero_drift(), diffusion, init, grid, seed)


def empirical_measure(
    bundle: PathBundle, t: float, paths: bool = False, members_only: bool = False
) -> np.ndarray:
    """Uniformly weighted sample of vertex states (or path prefixes) at time t"""
    j = bundle.grid.index_of(t)
    rows = np.flatnonzero(bundle.membership) if members_only else np.arange(bundle.n)
    if paths:
        return bundle.states[rows, : j + 1, :]
    return bundle.states[rows, j, :]


def _keep_rows(frame: Frame, keep_depth: Optional[int]) -> np.ndarray:
    if keep_depth is None:
        return np.arange(frame.n)
    return np.array([i for i, label in enumerate(frame.labels) if label.depth <= keep_depth])


def simulate_tree_ensemble(
    rho: OffspringLaw,
    depth_cap: int,
    width_cap: int,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    grid: TimeGrid,
    replicas: int,
    seed: int,
    keep_depth: Optional[int] = 2,
    batch: int = TREE_BATCH,
    workers: Optional[int] = None,
    check_growth: bool = False,
) -> List[TreeRun]:
    """Independent UGW(rho) trees, each simulated with its own noise streams.

    Tree r uses the TREE stream (seed, r) and INIT/NOISE streams prefixed by r,
    so a replica's output does not depend on the batch it lands in.
    """
    logger.info(
        f"Tree ensemble: {replicas} UGW trees ({rho.name}), depth {depth_cap}, "
        f"{grid.steps} steps, batch {batch}"
    )

    def run_batch(start: int) -> List[TreeRun]:
        stop = min(start + batch, replicas)
        trees = [sample_ugw(rho, depth_cap, width_cap, seed, replica=r) for r in range(start, stop)]
        frames = [tree.frame() for tree in trees]
        union, offsets = Frame.disjoint_union(frames)
        parts = [draw_inputs(f, init, grid, seed, (r,)) for f, r in zip(frames, range(start, stop))]
        x0 = np.concatenate([p[0] for p in parts])
        xi = np.concatenate([p[1] for p in parts])
        states = integrate(union, drift, diffusion, grid, x0, xi, check_growth)

        runs = []
        for i, (tree, frame) in enumerate(zip(trees, frames)):
            keep = _keep_rows(frame, keep_depth)
            bundle = PathBundle(
                grid=grid,
                states=states[offsets[i] : offsets[i + 1]][keep],
                membership=frame.membership[keep],
                names=[frame.names[k] for k in keep],
            )
            runs.append(TreeRun(tree=tree, bundle=bundle))
        return runs

    batches = ordered_map(run_batch, range(0, replicas, batch), workers)
    return [run for part in batches for run in part]


def moment_bound_check(
    bundles: Sequence[PathBundle],
    classify: Optional[Callable[[str], str]] = None,
    fractions: Sequence[float] = (0.25, 0.5, 0.75, 1.0),
    growth_factor: float = 16.0,
    min_bundles: int = 100,
) -> TestReport:
    """Estimate sup_v E||X_v||^2_{*,t} per vertex class at several horizons t <= T"""
    name = "moment-bound"
    if len(bundles) < min_bundles:
        return TestReport.inconclusive(
            name, f"need {min_bundles} bundles, got {len(bundles)}", sizes={"bundles": len(bundles)}
        )
    if classify is None:
        classify = _depth_class if "o" in bundles[0].names else (lambda _: "all")
    grid = bundles[0].grid
    steps = [max(1, int(round(f * grid.steps))) for f in fractions]

    per_class = {}
    for bundle in bundles:
        norms = np.linalg.norm(bundle.states, axis=2)
        running = np.maximum.accumulate(norms, axis=1) ** 2
        for row, vertex in enumerate(bundle.names):
            per_class.setdefault(classify(vertex), []).append(running[row, steps])

    estimates, errors = {}, {}
    for key, rows in per_class.items():
        rows = np.asarray(rows)
        estimates[key] = rows.mean(axis=0)
        spread = rows.std(axis=0, ddof=1) if rows.shape[0] > 1 else np.zeros(rows.shape[1])
        errors[key] = spread / np.sqrt(rows.shape[0])

    sup = np.max(np.vstack(list(estimates.values())), axis=0)
    worst = max(estimates, key=lambda k: estimates[k][-1])
    ratios = sup[1:] / np.maximum(sup[:-1], 1e-300)
    flagged = (not np.all(np.isfinite(sup))) or bool(np.any(ratios > growth_factor))
    if flagged:
        logger.warning(f"Second moment grows too fast across horizons: {sup.tolist()}")

    return TestReport(
        name=name,
        statistic=float(sup[-1]),
        threshold=growth_factor,
        mc_std_error=float(errors[worst][-1]),
        verdict=Verdict.FAIL if flagged else Verdict.PASS,
        sizes={"bundles": len(bundles), "classes": len(estimates)},
        details={
            "horizons": [grid.time(s) for s in steps],
            "sup_estimates": sup.tolist(),
            "per_class": {k: v.tolist() for k, v in sorted(estimates.items())},
        },
    )


def _depth_class(name: str) -> str:
    return "depth-0" if name == "o" else f"depth-{name.count('.') + 1}"
