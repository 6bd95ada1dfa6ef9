"""Ensemble solvers for the local equations on the kappa-regular tree and on UGW(rho).

An ensemble holds M replicas of the root neighborhood. At every step the
root moves with the true drift of its member children and each member child
k moves with gamma_hat(Y_k, Y_root), a regression across replicas built from
the ensemble at the current step. All replicas then advance together.
"""

import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.models.coefficients import DiffusionSpec, DriftSpec, InitialLaw
from src.models.ensemble import HistoryEmbedding, LocalEnsemble, TreeRun
from src.models.paths import TimeGrid
from src.models.topology import OffspringLaw, UhnLabel
from src.schemas.config import GammaEstimatorConfig
from src.schemas.report import GammaDiagnostic, TestReport
from src.services.builders import zero_drift
from src.services.dynamics import DIVERGENCE_BOUND
from src.services.gamma import GammaEstimator, constant_value
from src.services.topology import first_generation
from src.utils import rng
from src.utils.errors import (
    DivergedError,
    InsufficientDataError,
    InvalidArgumentError,
    InvalidLawError,
)

logger = logging.getLogger(__name__)

HFunction = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _flat(ensemble: LocalEnsemble) -> np.ndarray:
    m, slots, steps, dim = ensemble.states.shape
    return ensemble.states.reshape(m * slots, steps, dim)


def root_drift(ensemble: LocalEnsemble, step: int, replicas: Optional[np.ndarray] = None):
    """b(t_j, Y_root, <Y_k : k member>) for the selected replicas"""
    if replicas is None:
        replicas = np.arange(ensemble.replicas)
    width = ensemble.slots + 1
    degrees = ensemble.degrees[replicas]
    rows = replicas * width
    indptr = np.zeros(replicas.size + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(degrees)
    offsets = np.arange(indptr[-1]) - np.repeat(indptr[:-1], degrees)
    indices = np.repeat(rows, degrees) + offsets + 1
    t = ensemble.grid.time(step)
    return ensemble.drift.evaluate(step, t, _flat(ensemble), rows, indptr, indices)


def _pairwise_mode(ensemble: LocalEnsemble) -> bool:
    return (
        ensemble.config.pairwise_decomposition
        and not ensemble.tilted
        and ensemble.drift.is_pairwise
        and ensemble.slots >= 2
    )


def _fit_regular(ensemble: LocalEnsemble, step: int) -> GammaEstimator:
    emb = ensemble.embedding
    features = emb.embed_pair(ensemble.root(), ensemble.child(1), step)
    if _pairwise_mode(ensemble):
        flat = _flat(ensemble)
        width = ensemble.slots + 1
        roots = np.arange(ensemble.replicas) * width
        t = ensemble.grid.time(step)
        responses = ensemble.drift.pairwise(step, t, flat, roots, roots + 2)
    else:
        responses = root_drift(ensemble, step)
    estimator = GammaEstimator(ensemble.config)
    return estimator.fit(features, responses, constant=constant_value(responses))


def _fit_ugw(ensemble: LocalEnsemble, step: int, pooled: bool = False) -> GammaEstimator:
    design = np.flatnonzero(ensemble.degrees > 0)
    emb = ensemble.embedding
    features = emb.embed_pair(ensemble.root()[design], ensemble.child(1)[design], step)
    b = root_drift(ensemble, step, design)
    w = ensemble.tilt_weights()[design][:, None]
    stratify = ensemble.config.stratify_by_degree
    estimator = GammaEstimator(
        ensemble.config,
        stratify_by_degree=not pooled and (True if stratify is None else stratify),
    )
    # equal weights cancel in the ratio
    estimator.ratio = constant_value(w) is None
    return estimator.fit(
        features,
        np.hstack([w * b, w]) if estimator.ratio else b,
        degrees=ensemble.degrees[design],
        constant=constant_value(b),
    )


def estimate_gamma_regular(
    ensemble: LocalEnsemble, step: int, first: np.ndarray, second: np.ndarray
) -> np.ndarray:
    """gamma_hat(first, second) ~ E[b(t_j, Y_root, Y_1..kappa) | Y_root ~ first, Y_1 ~ second].

    `first` and `second` are path arrays (Q, K+1, d); only steps <= step are read.
    """
    estimates, _, _ = _regular_queries(ensemble, step, first, second, _fit_regular(ensemble, step))
    return estimates


def _regular_queries(ensemble, step, first, second, estimator):
    queries = ensemble.embedding.embed_pair(first, second, step)
    pred, sizes, fallbacks = estimator.predict(queries)
    if estimator.is_constant or not _pairwise_mode(ensemble):
        return pred, sizes, fallbacks
    kappa = ensemble.slots
    t = ensemble.grid.time(step)
    pair = np.concatenate([first[:, : step + 1], second[:, : step + 1]])
    count = first.shape[0]
    direct = ensemble.drift.pairwise(
        step, t, pair, np.arange(count), np.arange(count, 2 * count)
    )
    return direct / kappa + (kappa - 1) / kappa * pred, sizes, fallbacks


def estimate_gamma_ugw(
    ensemble: LocalEnsemble,
    step: int,
    first: np.ndarray,
    second: np.ndarray,
    second_frozen: Optional[np.ndarray] = None,
    root_degree: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Tilted ratio estimate of gamma_t on UGW(rho).

    Queries whose second path is frozen (not in the tree) or whose root has degree 0
    get b(t_j, first, empty). `root_degree`, when given, selects the degree stratum
    of each query.
    """
    estimates, _, _ = _ugw_queries(
        ensemble, step, first, second, second_frozen, root_degree, _fit_ugw(ensemble, step)
    )
    return estimates


def _ugw_queries(ensemble, step, first, second, second_frozen, root_degree, estimator):
    count = first.shape[0]
    dim = ensemble.dim
    frozen = np.zeros(count, bool) if second_frozen is None else np.asarray(second_frozen, bool)
    empty = frozen if root_degree is None else frozen | (np.asarray(root_degree) == 0)
    out = np.empty((count, dim))
    sizes = np.zeros(count, dtype=np.int64)
    fallbacks = 0

    if empty.any():
        t = ensemble.grid.time(step)
        lone = first[empty, : step + 1]
        empty_ptr = np.zeros(lone.shape[0] + 1, dtype=np.int64)
        out[empty] = ensemble.drift.evaluate(
            step, t, lone, np.arange(lone.shape[0]), empty_ptr, np.zeros(0, np.int64)
        )
    live = ~empty
    if live.any():
        queries = ensemble.embedding.embed_pair(first[live], second[live], step)
        degrees = None if root_degree is None else np.asarray(root_degree)[live]
        pred, sizes[live], fallbacks = estimator.predict(queries, degrees)
        if estimator.is_constant or not estimator.ratio:
            out[live] = pred
        else:
            den = np.maximum(pred[:, dim], ensemble.config.denominator_floor)
            out[live] = pred[:, :dim] / den[:, None]
    return out, sizes, fallbacks


def _child_drifts(ensemble: LocalEnsemble, step: int, members: np.ndarray):
    """gamma_hat(Y_k, Y_root) for every member slot (replica, k)"""
    replica, slot = members
    if ensemble.drift.is_zero or replica.size == 0:
        return np.zeros((replica.size, ensemble.dim)), 0, 0, 0
    first = ensemble.states[replica, slot]
    second = ensemble.states[replica, 0]
    if ensemble.tilted:
        # child degrees are integrated out, so the member fit never stratifies
        estimator = _fit_ugw(ensemble, step, pooled=True)
        out, sizes, fallbacks = _ugw_queries(
            ensemble, step, first, second, None, None, estimator
        )
    else:
        estimator = _fit_regular(ensemble, step)
        out, sizes, fallbacks = _regular_queries(ensemble, step, first, second, estimator)
    return out, estimator.design_size, float(np.mean(sizes)), fallbacks


def _draw_ensemble_inputs(init: InitialLaw, grid: TimeGrid, replicas: int, slots: int, seed: int):
    keys = [UhnLabel.root().stream_key()] + [
        UhnLabel((k,)).stream_key() for k in range(1, slots + 1)
    ]
    x0 = np.empty((replicas, slots + 1, init.dim))
    xi = np.empty((replicas, slots + 1, grid.steps, init.dim))
    for r in range(replicas):
        x0[r] = init.sample(seed, keys, (r,))
        xi[r] = rng.normals(seed, rng.NOISE, keys, (grid.steps, init.dim), (r,))
    return x0, xi


def _march(ensemble: LocalEnsemble, xi: np.ndarray) -> LocalEnsemble:
    grid = ensemble.grid
    h = grid.h
    root_h = np.sqrt(h)
    width = ensemble.slots + 1
    mask = ensemble.member_mask()
    members = np.nonzero(mask)
    member_rows = members[0] * width + members[1] + 1
    roots = np.arange(ensemble.replicas) * width
    flat = _flat(ensemble)
    live = np.concatenate([roots, member_rows])
    flat_xi = xi.reshape(ensemble.replicas * width, grid.steps, ensemble.dim)

    for j in range(grid.steps):
        t = grid.time(j)
        drift = np.empty((live.size, ensemble.dim))
        drift[: roots.size] = root_drift(ensemble, j)
        drift[roots.size :], design, mean_size, fallbacks = _child_drifts(ensemble, j, members)
        noise = ensemble.diffusion.apply(j, t, flat, live, flat_xi[live, j, :])
        nxt = flat[live, j] + drift * h + root_h * noise
        if not np.all(np.isfinite(nxt)) or np.any(np.abs(nxt) > DIVERGENCE_BOUND):
            raise DivergedError(j + 1)
        flat[live, j + 1] = nxt
        ensemble.diagnostics.append(
            GammaDiagnostic(
                step=j,
                time=t,
                queries=int(members[0].size),
                design_size=int(design),
                mean_stratum_size=float(mean_size),
                fallbacks=int(fallbacks),
            )
        )
        if j % max(1, grid.steps // 10) == 0:
            logger.debug(f"Local ensemble step {j}/{grid.steps}")
    return ensemble


def _build(
    degrees: np.ndarray,
    aux: np.ndarray,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    grid: TimeGrid,
    cfg: GammaEstimatorConfig,
    seed: int,
    tilted: bool,
    rho: Optional[OffspringLaw],
) -> LocalEnsemble:
    replicas = degrees.size
    slots = int(degrees.max()) if replicas else 0
    x0, xi = _draw_ensemble_inputs(init, grid, replicas, slots, seed)
    states = np.empty((replicas, slots + 1, grid.steps + 1, init.dim))
    states[:, :, :] = x0[:, :, None, :]
    ensemble = LocalEnsemble(
        grid=grid,
        states=states,
        degrees=degrees,
        aux=aux,
        drift=drift,
        diffusion=diffusion,
        config=cfg,
        tilted=tilted,
        seed=seed,
        rho=rho,
        embedding=HistoryEmbedding(cfg.lags),
    )
    return _march(ensemble, xi)


def solve_local_regular(
    kappa: int,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    M: int,
    grid: TimeGrid,
    cfg: GammaEstimatorConfig,
    seed: int,
) -> LocalEnsemble:
    """Local equation on the kappa-regular tree"""
    if kappa < 2:
        raise InvalidArgumentError("the regular local equation needs kappa >= 2")
    logger.info(f"Solving regular local equation: kappa={kappa}, M={M}, K={grid.steps}")
    degrees = np.full(M, kappa, dtype=np.int64)
    aux = np.full(M, kappa - 1, dtype=np.int64)
    return _build(degrees, aux, drift, diffusion, init, grid, cfg, seed, False, None)


def solve_local_ugw(
    rho: OffspringLaw,
    drift: DriftSpec,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    M: int,
    grid: TimeGrid,
    cfg: GammaEstimatorConfig,
    seed: int,
    width_cap: Optional[int] = None,
) -> LocalEnsemble:
    """Local equation on UGW(rho) with random first generations"""
    _check_moments(rho)
    if cfg.stratify_by_degree:
        logger.warning(
            "stratify_by_degree only affects gamma queries that carry a root degree; "
            "the solver fits child drifts on the pooled design"
        )
    width_cap = width_cap or rho.truncation_cap
    degrees, aux = first_generation(rho, M, width_cap, seed)
    logger.info(
        f"Solving UGW local equation: {rho.name}, M={M}, K={grid.steps}, "
        f"max degree {int(degrees.max()) if M else 0}"
    )
    return _build(degrees, aux, drift, diffusion, init, grid, cfg, seed, True, rho)


def driftless_local_ensemble(
    rho_or_kappa,
    diffusion: DiffusionSpec,
    init: InitialLaw,
    M: int,
    grid: TimeGrid,
    cfg: GammaEstimatorConfig,
    seed: int,
    width_cap: Optional[int] = None,
) -> LocalEnsemble:
    """The driftless reference ensemble on the same structures and noise keys"""
    if isinstance(rho_or_kappa, OffspringLaw):
        return solve_local_ugw(
            rho_or_kappa, zero_drift(), diffusion, init, M, grid, cfg, seed, width_cap
        )
    return solve_local_regular(int(rho_or_kappa), zero_drift(), diffusion, init, M, grid, cfg, seed)


def _check_moments(rho: OffspringLaw) -> None:
    if not np.isfinite(rho.second_moment):
        raise InvalidLawError("offspring law needs a finite second moment")


def _neighbor_mean(run: TreeRun, label: UhnLabel, step: int) -> Optional[np.ndarray]:
    neighbors = run.tree.neighbors(label)
    if not neighbors:
        return None
    return np.mean([run.path(v)[step] for v in neighbors], axis=0)


def default_h(first: np.ndarray, second: np.ndarray, neighbor_mean: np.ndarray) -> np.ndarray:
    """Bounded coordinate function of the neighborhood average"""
    return np.tanh(neighbor_mean[:, 0])


def reroot_gamma_check(
    runs: List[TreeRun],
    step: int,
    k: int = 1,
    h: HFunction = default_h,
    cfg: Optional[GammaEstimatorConfig] = None,
    panel: int = 50,
    bootstrap: int = 20,
    seed: int = 0,
    tolerance: float = 3.0,
) -> TestReport:
    """Compare the tilted root regression with the direct regression at child k.

    (a) fits (X_root, X_1) -> [w h(X_root, X_1, <X_N_root>), w] with w = |N_root| / |N_1|
        and evaluates the ratio at (X_k, X_root);
    (b) fits (X_k, X_root) -> h(X_k, X_root, <X_N_k>) on replicas with k in the tree.
    The statistic is the panel maximum of |a - b| in pooled bootstrap standard errors.
    """
    cfg = cfg or GammaEstimatorConfig()
    root = UhnLabel.root()
    child1 = UhnLabel((1,))
    childk = UhnLabel((k,))
    emb = HistoryEmbedding(cfg.lags)

    with_one = [r for r in runs if r.has(child1)]
    with_k = [r for r in runs if r.has(childk)]
    needed = max(cfg.neighbors_for(len(with_k) or 1), 2)
    if len(with_k) < needed or len(with_one) < needed:
        raise InsufficientDataError(
            f"only {len(with_k)} replicas contain child {k} (need {needed})"
        )

    def stacked(group, label):
        return np.stack([r.path(label) for r in group])

    def responses(group, first_label, second_label, center):
        first = stacked(group, first_label)[:, step]
        second = stacked(group, second_label)[:, step]
        means = np.stack([_neighbor_mean(r, center, step) for r in group])
        return np.asarray(h(first, second, means), dtype=float).reshape(len(group), -1)

    tilt_x = emb.embed_pair(stacked(with_one, root), stacked(with_one, child1), step)
    tilt_h = responses(with_one, root, child1, root)
    tilt_w = np.array([r.tree.count(root) / (1.0 + r.tree.count(child1)) for r in with_one])
    tilt_w = tilt_w[:, None]

    direct_x = emb.embed_pair(stacked(with_k, childk), stacked(with_k, root), step)
    direct_h = responses(with_k, childk, root, childk)

    gen = rng.stream(seed, rng.CHECK, step, k)
    chosen = np.sort(gen.choice(len(with_k), size=min(panel, len(with_k)), replace=False))
    queries = direct_x[chosen]

    def tilted_fit(rows):
        hs = tilt_h[rows]
        est = GammaEstimator(cfg).fit(
            tilt_x[rows], np.hstack([tilt_w[rows] * hs, tilt_w[rows]]), constant=constant_value(hs)
        )
        pred, _, _ = est.predict(queries)
        if est.is_constant:
            return pred
        return pred[:, :-1] / np.maximum(pred[:, -1:], cfg.denominator_floor)

    def direct_fit(rows):
        hs = direct_h[rows]
        est = GammaEstimator(cfg).fit(direct_x[rows], hs, constant=constant_value(hs))
        return est.predict(queries)[0]

    a = tilted_fit(np.arange(len(with_one)))
    b = direct_fit(np.arange(len(with_k)))

    boot_a, boot_b = [], []
    for _ in range(bootstrap):
        boot_a.append(tilted_fit(gen.integers(0, len(with_one), len(with_one))))
        boot_b.append(direct_fit(gen.integers(0, len(with_k), len(with_k))))
    sigma = np.sqrt(np.var(boot_a, axis=0, ddof=1) + np.var(boot_b, axis=0, ddof=1))
    diff = np.abs(a - b)
    scaled = np.where(diff == 0, 0.0, diff / np.maximum(sigma, 1e-12))
    statistic = float(scaled.max())

    return TestReport.against_threshold(
        "reroot-gamma",
        statistic,
        tolerance,
        mc_std_error=float(np.sqrt(np.mean(sigma**2))),
        seeds=[seed],
        sizes={"replicas": len(runs), "with_child": len(with_k), "panel": int(chosen.size)},
        details={"sup_difference": float(diff.max()), "step": step, "child": k},
    )
