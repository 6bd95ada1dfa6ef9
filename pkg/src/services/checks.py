"""Exact and Monte Carlo checks of the identities satisfied by the systems.

Each check returns a ``TestReport``. Monte Carlo checks express their pass
thresholds in estimated standard errors (default 3) or as p-value floors
(default 0.01).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.cluster import KMeans
from sklearn.preprocessing import StandardScaler

from src.models.coefficients import DiffusionSpec, DriftSpec, InitialLaw
from src.models.ensemble import HistoryEmbedding, LocalEnsemble, TreeRun
from src.models.paths import PathBundle, PathWeight, TimeGrid
from src.models.topology import FiniteGraph, OffspringLaw, UhnLabel
from src.schemas.report import TestReport, Verdict
from src.services.builders import zero_drift
from src.services.distances import slice_directions, two_sample_ks, wasserstein1, weighted_ks
from src.services.dynamics import member_csr, simulate_system, simulate_tree_ensemble
from src.services.topology import first_generation, size_biased
from src.utils import rng
from src.utils.errors import InvalidArgumentError, InvalidTestFunctionError

logger = logging.getLogger(__name__)

SIGMA_MULTIPLE = 3.0
P_FLOOR = 0.01
EXACT_TOL = 1e-12


def _z_report(name: str, diffs: np.ndarray, tolerance: float = SIGMA_MULTIPLE, **kwargs):
    """Pass when |mean(diffs)| is within `tolerance` standard errors of zero"""
    mean = float(np.mean(diffs))
    se = float(np.std(diffs, ddof=1) / math.sqrt(diffs.size)) if diffs.size > 1 else 0.0
    if se == 0.0:
        statistic = 0.0 if mean == 0.0 else float("inf")
    else:
        statistic = abs(mean) / se
    details = dict(kwargs.pop("details", {}))
    details["mean_difference"] = mean
    return TestReport(
        name=name,
        statistic=statistic,
        threshold=tolerance,
        mc_std_error=se,
        verdict=Verdict.PASS if statistic <= tolerance else Verdict.FAIL,
        details=details,
        **kwargs,
    )


# exact checks on offspring laws


def size_bias_check(rho: OffspringLaw, tolerance: float = 1e-10) -> TestReport:
    """Termwise size_biased against (k+1) rho(k+1) / E[K], plus the mean identity"""
    hat = size_biased(rho)
    mean = math.fsum(k * float(p) for k, p in enumerate(rho.pmf))
    expected = [(k + 1) * float(rho.prob(k + 1)) / mean for k in range(rho.pmf.size - 1)]
    termwise = max(abs(hat.prob(k) - e) for k, e in enumerate(expected))
    mean_gap = abs(hat.mean - (rho.second_moment - rho.mean) / rho.mean)
    return TestReport.against_threshold(
        "size-bias",
        max(termwise, mean_gap),
        tolerance,
        details={
            "termwise": termwise,
            "mean_gap": mean_gap,
            "mass": float(hat.pmf.sum()),
            "truncation_bias": rho.truncation_bias,
        },
    )


def reweight_identity_check(rho: OffspringLaw, h: Callable[[int], float]) -> TestReport:
    """Both tilted expectations against (1 - rho(0)) sum_k h(k+1) rho_hat(k), exact sums"""
    hat = size_biased(rho)
    hat_terms = list(enumerate(hat.pmf))
    no_root_mass = 1.0 - rho.prob(0)

    closed = no_root_mass * math.fsum(h(k + 1) * float(p) for k, p in hat_terms)
    # E[h(1 + C_hat) 1{N nonempty}], with C_hat independent of the root degree
    aux_side = math.fsum(
        float(q) * float(p) * h(k + 1)
        for n, q in enumerate(rho.pmf)
        if n >= 1
        for k, p in hat_terms
    )
    # E[|N| / (1 + C_hat) h(|N|) 1{N nonempty}]
    inverse_aux = math.fsum(float(p) / (k + 1) for k, p in hat_terms)
    degree_side = math.fsum(n * float(p) * h(n) for n, p in enumerate(rho.pmf) if n >= 1)
    degree_side *= inverse_aux

    gap = max(abs(aux_side - closed), abs(degree_side - closed), abs(aux_side - degree_side))
    return TestReport.against_threshold(
        "reweight-identity",
        gap,
        EXACT_TOL,
        details={"aux_side": aux_side, "degree_side": degree_side, "closed_form": closed},
    )


def tilt_normalization_check(rho: OffspringLaw, samples: int, seed: int) -> TestReport:
    """MC mean of 1{N nonempty} |N| / (1 + C_hat) against 1 - rho(0)"""
    degrees, aux = first_generation(rho, samples, rho.truncation_cap, seed)
    values = np.where(degrees > 0, degrees / (1.0 + aux), 0.0)
    target = 1.0 - rho.prob(0)
    report = _z_report(
        "tilt-normalization",
        values - target,
        seeds=[seed],
        sizes={"samples": samples},
        details={"target": target, "estimate": float(values.mean())},
    )
    return report


# mass transport


@dataclass(frozen=True)
class TransportFunction:
    """Bounded F(tree, marks, o, o') vanishing beyond graph distance `radius`"""

    name: str
    radius: int
    bound: float
    fn: Callable[["MarkedTree", UhnLabel, UhnLabel], float]


class MarkedTree:
    """Tree with vertex marks x_v(t) read from a simulated run"""

    def __init__(self, run: TreeRun, step: int):
        self.tree = run.tree
        self._marks = {name: run.bundle.states[i, step] for i, name in enumerate(run.bundle.names)}

    def mark(self, label: UhnLabel) -> np.ndarray:
        return self._marks[str(label)]

    def neighbors(self, label: UhnLabel) -> List[UhnLabel]:
        return self.tree.neighbors(label)

    def ball(self, center: UhnLabel, radius: int) -> Dict[UhnLabel, int]:
        """Members within distance `radius`, with their distance"""
        seen = {center: 0}
        frontier = [center]
        for dist in range(1, radius + 1):
            nxt = []
            for v in frontier:
                for u in self.neighbors(v):
                    if u not in seen:
                        seen[u] = dist
                        nxt.append(u)
            frontier = nxt
        return seen


def _adjacent(tree: MarkedTree, o: UhnLabel, o2: UhnLabel) -> bool:
    return o2 in tree.neighbors(o)


def default_transport_family() -> List[TransportFunction]:
    phi = lambda x: math.tanh(float(x[0]))
    return [
        TransportFunction("diagonal", 0, 1.0, lambda g, o, o2: float(o == o2)),
        TransportFunction("adjacent", 1, 1.0, lambda g, o, o2: float(_adjacent(g, o, o2))),
        TransportFunction(
            "adjacent-source-mark",
            1,
            1.0,
            lambda g, o, o2: phi(g.mark(o)) if _adjacent(g, o, o2) else 0.0,
        ),
        TransportFunction(
            "adjacent-inverse-degree",
            1,
            1.0,
            lambda g, o, o2: 1.0 / len(g.neighbors(o)) if _adjacent(g, o, o2) else 0.0,
        ),
        TransportFunction(
            "distance-two-marks",
            2,
            1.0,
            lambda g, o, o2: (
                phi(g.mark(o)) * phi(g.mark(o2)) ** 2 if g.ball(o, 2).get(o2) == 2 else 0.0
            ),
        ),
    ]


def mass_transport_check(
    rho: OffspringLaw,
    family: Optional[Sequence[TransportFunction]],
    reps: int,
    seed: int,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    grid: TimeGrid,
    t: Optional[float] = None,
    width_cap: Optional[int] = None,
) -> TestReport:
    """E[sum_o' F(o, o')] against E[sum_o' F(o', o)] on marked UGW trees, per-tree paired"""
    family = list(family or default_transport_family())
    radius = max(f.radius for f in family)
    if radius > 3:
        raise InvalidTestFunctionError("test functions must have radius <= 3")
    t = grid.horizon if t is None else t
    step = grid.index_of(t)
    runs = simulate_tree_ensemble(
        rho,
        depth_cap=2 * radius + 3,
        width_cap=width_cap or rho.truncation_cap,
        drift=drift,
        diffusion=diffusion,
        init=init,
        grid=grid,
        replicas=reps,
        seed=seed,
        keep_depth=2 * radius,
    )
    root = UhnLabel.root()
    diffs = {f.name: np.empty(reps) for f in family}
    sides = {f.name: np.empty((reps, 2)) for f in family}
    for i, run in enumerate(runs):
        marked = MarkedTree(run, step)
        near = marked.ball(root, radius)
        for f in family:
            out_mass = in_mass = 0.0
            for other, dist in near.items():
                if dist > f.radius:
                    continue
                a, b = f.fn(marked, root, other), f.fn(marked, other, root)
                if abs(a) > f.bound or abs(b) > f.bound:
                    raise InvalidTestFunctionError(f"{f.name} exceeds its bound {f.bound}")
                out_mass += a
                in_mass += b
            sides[f.name][i] = (out_mass, in_mass)
            diffs[f.name][i] = out_mass - in_mass

    reports = {}
    for f in family:
        out_mean, in_mean = sides[f.name].mean(axis=0)
        reports[f.name] = _z_report(
            f"mass-transport:{f.name}",
            diffs[f.name],
            details={"out_mean": float(out_mean), "in_mean": float(in_mean)},
        )
    worst = max(reports.values(), key=lambda r: r.statistic)
    return TestReport(
        name="mass-transport",
        statistic=worst.statistic,
        threshold=SIGMA_MULTIPLE,
        mc_std_error=worst.mc_std_error,
        verdict=Verdict.PASS if all(r.passed for r in reports.values()) else Verdict.FAIL,
        seeds=[seed],
        sizes={"trees": reps, "functions": len(family)},
        details={
            "expected_degree": rho.mean,
            "functions": {k: {**r.details, "z": r.statistic} for k, r in reports.items()},
        },
    )


# change of measure


def girsanov_weight(
    bundle: PathBundle, drift: DriftSpec, diffusion: DiffusionSpec, grid: Optional[TimeGrid] = None
) -> PathWeight:
    """Per-path log density of the drifted law against the driftless law, on driftless paths.

    log w_v = sum_j (sigma sigma^T)^{-1} b . dX_j - 1/2 sum_j |sigma^{-1} b|^2 h
    The system-level log density is the sum over vertices.
    """
    grid = grid or bundle.grid
    states = bundle.states
    members = np.flatnonzero(bundle.membership)
    if bundle.frame is not None:
        indptr, indices = member_csr(bundle.frame, members)
    else:
        indptr, indices = np.zeros(members.size + 1, dtype=np.int64), np.zeros(0, np.int64)

    log_weight = np.zeros(bundle.n)
    if drift.is_zero:
        return PathWeight(log_weight=log_weight)
    h = grid.h
    acc = np.zeros(members.size)
    for j in range(grid.steps):
        t = grid.time(j)
        b = drift.evaluate(j, t, states, members, indptr, indices)
        u = diffusion.solve(j, t, states, members, b)
        dx = diffusion.solve(j, t, states, members, states[members, j + 1] - states[members, j])
        acc += np.sum(u * dx, axis=1) - 0.5 * np.sum(u * u, axis=1) * h
    log_weight[members] = acc
    return PathWeight(log_weight=log_weight)


def _isolated(count: int) -> FiniteGraph:
    return FiniteGraph(n=count, adjacency=tuple(() for _ in range(count)))


def girsanov_check(
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    grid: TimeGrid,
    M: int,
    seed: int,
    marginal_tol: float = 0.03,
) -> TestReport:
    """Girsanov weights on M isolated driftless paths.

    The mean of exp(log w) must be 1 within 3 standard errors, and the
    reweighted terminal marginal must lie within `marginal_tol` (W1) of the
    marginal simulated directly with the drift.
    """
    graph = _isolated(M)
    driftless = simulate_system(graph, zero_drift(), diffusion, init, grid, seed)
    weight = girsanov_weight(driftless, drift, diffusion, grid)
    martingale = _z_report("girsanov-mean", weight.weights() - 1.0)

    direct = simulate_system(graph, drift, diffusion, init, grid, rng.child_seed(seed, 1))
    terminal = driftless.states[:, -1, :]
    distance = wasserstein1(terminal, direct.states[:, -1, :], weight.normalized())

    passed = martingale.passed and distance <= marginal_tol
    return TestReport(
        name="girsanov",
        statistic=martingale.statistic,
        threshold=SIGMA_MULTIPLE,
        mc_std_error=martingale.mc_std_error,
        verdict=Verdict.PASS if passed else Verdict.FAIL,
        seeds=[seed],
        sizes={"paths": M, "steps": grid.steps},
        details={
            "mean_weight": float(weight.weights().mean()),
            "reweighted_w1": float(distance),
            "w1_tolerance": marginal_tol,
            "effective_size": float(1.0 / np.sum(weight.normalized() ** 2)),
        },
    )



def relative_entropy_check(
    b1: DriftSpec,
    b2: DriftSpec,
    sigma: DiffusionSpec,
    grid: TimeGrid,
    M: int,
    init: InitialLaw,
    seed: int,
) -> TestReport:
    """H(P1 | P2) two ways on M independent paths of the b1-system.

    LHS: mean of log dP1/dP2 from Girsanov weights against the driftless law.
    RHS: 1/2 mean of sum_j |sigma^{-1}(b1 - b2)|^2 h.
    """
    graph = _isolated(M)
    bundle = simulate_system(graph, b1, sigma, init, grid, seed)
    log_ratio = (
        girsanov_weight(bundle, b1, sigma, grid).log_weight
        - girsanov_weight(bundle, b2, sigma, grid).log_weight
    )
    rows = np.arange(M)
    empty = np.zeros(M + 1, dtype=np.int64)
    quad = np.zeros(M)
    for j in range(grid.steps):
        t = grid.time(j)
        diff = b1.evaluate(j, t, bundle.states, rows, empty, np.zeros(0, np.int64)) - b2.evaluate(
            j, t, bundle.states, rows, empty, np.zeros(0, np.int64)
        )
        u = sigma.solve(j, t, bundle.states, rows, diff)
        quad += np.sum(u * u, axis=1) * grid.h
    rhs = 0.5 * quad
    return _z_report(
        "relative-entropy",
        log_ratio - rhs,
        seeds=[seed],
        sizes={"paths": M, "steps": grid.steps},
        details={"lhs": float(log_ratio.mean()), "rhs": float(rhs.mean())},
    )


# conditional independence on trees


def _children_mean(run: TreeRun, labels: List[UhnLabel], step: int) -> float:
    return float(np.mean([math.tanh(run.path(v)[step, 0]) for v in labels]))


def mrf2_test(
    runs: List[TreeRun],
    k: int,
    t: float,
    order: int = 2,
    bins: Optional[int] = None,
    min_occupancy: int = 20,
    permutations: int = 200,
    lags: int = 4,
    seed: int = 0,
    alpha: float = P_FLOOR,
) -> TestReport:
    """Binned conditional-correlation test of the second-order Markov property at the root.

    Replicas are binned on the embedded histories of (X_root, X_k) (order 2) or
    of X_k alone (order 1). Within each bin the correlation between a summary of
    k's children and a summary of the other root children is Fisher-transformed;
    the squared z-scores are summed and calibrated by permuting within bins.
    """
    if order not in (1, 2):
        raise InvalidArgumentError("order must be 1 or 2")
    name = f"mrf2-order{order}"
    grid = runs[0].bundle.grid
    step = grid.index_of(t)
    root, child = UhnLabel.root(), UhnLabel((k,))

    usable = [
        r for r in runs if r.has(child) and r.tree.count(child) >= 1 and r.tree.count(root) >= 2
    ]
    if len(usable) < 2 * min_occupancy:
        return TestReport.inconclusive(name, "too few replicas", sizes={"usable": len(usable)})

    emb = HistoryEmbedding(lags)
    xk = np.stack([r.path(child) for r in usable])
    if order == 2:
        xr = np.stack([r.path(root) for r in usable])
        features = emb.embed_pair(xk, xr, step)
    else:
        features = emb.embed(xk, step)
    f = np.array([_children_mean(r, r.tree.children(child), step) for r in usable])
    g = np.array(
        [_children_mean(r, [c for c in r.tree.children(root) if c != child], step) for r in usable]
    )

    n_bins = bins or max(1, min(50, len(usable) // (2 * min_occupancy)))
    labels = KMeans(n_clusters=n_bins, n_init=4, random_state=seed % (2**32)).fit_predict(
        StandardScaler().fit_transform(features)
    )
    groups = [np.flatnonzero(labels == b) for b in range(n_bins)]
    groups = [idx for idx in groups if idx.size >= min_occupancy]
    if not groups:
        logger.warning(f"No bin reached {min_occupancy} replicas")
        return TestReport.inconclusive(name, "insufficient bin occupancy")

    def statistic(values_g: np.ndarray) -> float:
        total = 0.0
        for idx in groups:
            a, b = f[idx], values_g[idx]
            if np.std(a) == 0 or np.std(b) == 0:
                continue
            r = np.clip(np.corrcoef(a, b)[0, 1], -0.999999, 0.999999)
            total += (math.atanh(r) ** 2) * (idx.size - 3)
        return total

    observed = statistic(g)
    if permutations:
        gen = rng.stream(seed, rng.CHECK, step, k, order)
        exceed = 0
        for _ in range(permutations):
            shuffled = g.copy()
            for idx in groups:
                shuffled[idx] = g[gen.permutation(idx)]
            exceed += statistic(shuffled) >= observed
        p_value = (1 + exceed) / (1 + permutations)
    else:
        p_value = float(stats.chi2.sf(observed, len(groups)))

    return TestReport.against_p_value(
        name,
        observed,
        p_value,
        alpha,
        seeds=[seed],
        sizes={"replicas": len(usable), "bins": len(groups)},
        details={"chi2_p_value": float(stats.chi2.sf(observed, len(groups))), "order": order},
    )


# local-ensemble symmetries


def exchangeability_check(
    ensemble: LocalEnsemble, i: int, j: int, t: float, alpha: float = P_FLOOR
) -> TestReport:
    """(Y_root, Y_i) against (Y_root, Y_j) on replicas where both children are members"""
    if i == j or min(i, j) < 1 or max(i, j) > ensemble.slots:
        raise InvalidArgumentError(f"children {i}, {j} not available")
    keep = np.flatnonzero(ensemble.degrees >= max(i, j))
    half = keep.size // 2
    first, second = keep[:half], keep[half:]
    step = ensemble.grid.index_of(t)
    root = ensemble.states[:, 0, step, 0]
    yi, yj = ensemble.states[:, i, step, 0], ensemble.states[:, j, step, 0]

    marginal = two_sample_ks(yi[first], yj[second], alpha)
    joint = two_sample_ks(
        (root[first] + yi[first]) / math.sqrt(2), (root[second] + yj[second]) / math.sqrt(2), alpha
    )
    p_value = min(1.0, 2 * min(marginal.p_value, joint.p_value))
    return TestReport.against_p_value(
        "exchangeability",
        max(marginal.statistic, joint.statistic),
        p_value,
        alpha,
        seeds=[ensemble.seed],
        sizes={"replicas": int(keep.size)},
        details={"marginal_p": marginal.p_value, "joint_p": joint.p_value, "children": [i, j]},
    )


def pair_symmetry_check(
    ensemble: LocalEnsemble, t: float, directions: int = 8, alpha: float = P_FLOOR
) -> TestReport:
    """Law of (Y_root, Y_1) against that of (Y_1, Y_root) on disjoint replica halves.

    On UGW ensembles the replicas carry the tilt weights |N_root| / (1 + C_hat)
    and only replicas with a nonempty root neighborhood take part.
    """
    step = ensemble.grid.index_of(t)
    keep = np.flatnonzero(ensemble.degrees > 0)
    weights = ensemble.tilt_weights()[keep] if ensemble.tilted else np.ones(keep.size)
    pairs = np.hstack([ensemble.states[keep, 0, step, :], ensemble.states[keep, 1, step, :]])
    swapped = np.hstack([ensemble.states[keep, 1, step, :], ensemble.states[keep, 0, step, :]])
    half = keep.size // 2

    projections = slice_directions(pairs.shape[1], directions)
    p_values, statistics = [], []
    for theta in projections:
        report = weighted_ks(
            pairs[:half] @ theta, swapped[half:] @ theta, weights[:half], weights[half:], alpha
        )
        p_values.append(report.p_value)
        statistics.append(report.statistic)
    p_value = min(1.0, len(p_values) * min(p_values))
    return TestReport.against_p_value(
        "pair-symmetry",
        float(max(statistics)),
        p_value,
        alpha,
        seeds=[ensemble.seed],
        sizes={"replicas": int(keep.size), "directions": len(p_values)},
        details={"tilted": ensemble.tilted},
    )


# propagation of chaos


def chaos_check(
    bundle: PathBundle, graph: FiniteGraph, t: float, pairs: int, seed: int
) -> TestReport:
    """Correlation of (X_u(t), X_v(t)) over uniform distinct pairs and over edges.

    Uniform pairs should decorrelate; adjacent pairs keep their correlation.
    The statistic is the random-pair correlation in units of 1/sqrt(pairs).
    """
    if graph.n < 2:
        raise InvalidArgumentError("need at least two vertices")
    x = bundle.at(t)[:, 0]
    gen = rng.stream(seed, rng.CHECK, bundle.grid.index_of(t))
    u = gen.integers(0, graph.n, pairs)
    v = (u + gen.integers(1, graph.n, pairs)) % graph.n
    random_corr = float(np.corrcoef(x[u], x[v])[0, 1])

    edges = np.array(list(graph.edges()), dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] > pairs:
        edges = edges[np.sort(gen.choice(edges.shape[0], pairs, replace=False))]
    adjacent_corr = (
        float(np.corrcoef(x[edges[:, 0]], x[edges[:, 1]])[0, 1]) if edges.shape[0] > 2 else 0.0
    )
    statistic = abs(random_corr) * math.sqrt(pairs)
    return TestReport.against_threshold(
        "chaos",
        statistic,
        SIGMA_MULTIPLE,
        seeds=[seed],
        sizes={"vertices": graph.n, "pairs": pairs, "edges": int(edges.shape[0])},
        details={"random_pair_correlation": random_corr, "adjacent_correlation": adjacent_corr},
    )
