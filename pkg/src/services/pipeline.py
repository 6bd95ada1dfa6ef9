"""Run configuration parsing and the experiment pipeline.

Config files are flat ``key=value`` lines with dotted namespaces::

    kind=verify
    check=mass-transport
    model=ugw
    rho=poisson
    rho.theta=2
    drift=ou-pairwise
    drift.beta=0.5
    T=1
    K=100
    trees=10000
    seed=7

Blank lines and lines starting with ``#`` are ignored. List values
(``degrees``, ``rho.pmf``) are comma separated. ``contracts=true`` checks the
drift and sigma contracts before the run and the growth bound at every step.
"""

import hashlib
import json
import logging
import os
import traceback
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src import __version__
from src.models.coefficients import DiffusionSpec, DriftSpec, InitialLaw
from src.models.ensemble import LocalEnsemble, TreeRun
from src.models.paths import TimeGrid
from src.models.topology import OffspringLaw, UhnLabel
from src.schemas.config import RunConfig
from src.schemas.report import RunManifest, TestReport, Verdict
from src.services import checks
from src.services.builders import build_diffusion, build_drift, build_init
from src.services.contracts import check_diffusion_contract, check_drift_contract
from src.services.dynamics import moment_bound_check, simulate_system, simulate_tree_ensemble
from src.services.experiments import GraphModel, local_limit_experiment, tree_vs_local_check
from src.services.export import (
    bundle_marginals,
    ensemble_csv,
    file_digest,
    root_marginals,
    tree_runs_csv,
    write_diagnostics_jsonl,
    write_marginals_csv,
    write_paths_csv,
    write_report_json,
)
from src.services.local_equation import reroot_gamma_check, solve_local_regular, solve_local_ugw
from src.services.topology import (
    delta_law,
    explicit_law,
    poisson_law,
    regular_tree,
    write_graph,
    write_tree,
)
from src.utils.errors import (
    ConfigError,
    InvalidArgumentError,
    InvalidLawError,
    RunLockedError,
    UgwError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_FAILED = 3

LOCK_NAME = ".lock"
MASS_TOLERANCE = 1e-12

SCALAR_KEYS: Dict[str, Tuple[str, ...]] = {
    "kind": ("kind",),
    "check": ("check",),
    "seed": ("seed",),
    "out": ("out",),
    "model": ("model", "name"),
    "n": ("model", "n"),
    "p": ("model", "p"),
    "kappa": ("model", "kappa"),
    "degrees": ("model", "degrees"),
    "degree_file": ("model", "degree_file"),
    "depth_cap": ("model", "depth_cap"),
    "width_cap": ("model", "width_cap"),
    "rho": ("model", "rho", "law"),
    "drift": ("coefficients", "drift"),
    "sigma": ("coefficients", "sigma"),
    "init": ("coefficients", "init"),
    "dim": ("coefficients", "dim"),
    "T": ("grid", "T"),
    "K": ("grid", "K"),
    "M": ("ensemble", "M"),
    "trees": ("ensemble", "trees"),
    "keep_depth": ("ensemble", "keep_depth"),
    "trials": ("ensemble", "trials"),
    "contracts": ("contracts",),
}

NAMESPACES: Dict[str, Tuple[str, ...]] = {
    "rho": ("model", "rho"),
    "drift": ("coefficients", "drift_params"),
    "sigma": ("coefficients", "sigma_params"),
    "init": ("coefficients", "init_params"),
    "estimator": ("estimator",),
    "check": ("check_params",),
}

LIST_KEYS = {("model", "degrees"), ("model", "rho", "pmf")}

H_FUNCTIONS: Dict[str, Callable[[int], float]] = {
    "one": lambda k: 1.0,
    "min5": lambda k: float(min(k, 5)),
    "inverse": lambda k: 1.0 / (1.0 + k),
    "parity": lambda k: float(k % 2),
}


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Parse and fully resolve a run configuration.

    Raises ConfigError naming the offending key. Warnings raised while
    resolving (for example a renormalized pmf) are stored on the config.
    """
    entries: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}", f"expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError(key, "given more than once")
        entries[key] = value
    entries.update(overrides or {})

    if "seed" not in entries:
        raise ConfigError("seed", "seed required")

    tree: Dict = {}
    origin: Dict[Tuple[str, ...], str] = {}
    for key, value in entries.items():
        loc = _location(key)
        origin[loc] = key
        if loc in LIST_KEYS:
            value = [item.strip() for item in value.split(",") if item.strip()]
        node = tree
        for part in loc[:-1]:
            node = node.setdefault(part, {})
        node[loc[-1]] = value

    try:
        config = RunConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_dotted(tuple(str(p) for p in first["loc"]), origin), first["msg"])

    resolved = resolve(config)
    config.warnings = resolved.warnings
    for warning in resolved.warnings:
        logger.warning(warning)
    return config


def _location(key: str) -> Tuple[str, ...]:
    if key in SCALAR_KEYS:
        return SCALAR_KEYS[key]
    head, _, rest = key.partition(".")
    if rest and head in NAMESPACES:
        return NAMESPACES[head] + (rest,)
    raise ConfigError(key, "unknown key")


def _dotted(loc: Tuple[str, ...], origin: Dict[Tuple[str, ...], str]) -> str:
    if loc in origin:
        return origin[loc]
    for key, path in SCALAR_KEYS.items():
        if path == loc:
            return key
    for head, path in NAMESPACES.items():
        if loc[: len(path)] == path:
            return ".".join((head,) + loc[len(path) :]) if len(loc) > len(path) else head
    if not loc:
        return "check"
    return ".".join(loc)


@dataclass
class ResolvedRun:
    """Builders, grid and structures behind a validated RunConfig"""

    config: RunConfig
    drift: DriftSpec
    diffusion: DiffusionSpec
    init: InitialLaw
    grid: TimeGrid
    rho: Optional[OffspringLaw] = None
    graph_model: Optional[GraphModel] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def check_growth(self) -> bool:
        return self.config.contracts

    @property
    def regular(self) -> bool:
        return self.config.model.name in ("regular", "regular-tree")

    def local_structure(self) -> Union[int, OffspringLaw]:
        return self.config.model.kappa if self.regular else self.require_rho()

    def tree_law(self) -> OffspringLaw:
        """UGW law of the deep-tree simulations; delta_kappa gives the regular tree"""
        if self.regular:
            return delta_law(self.config.model.kappa, max(self.config.model.kappa, 1))
        return self.require_rho()

    @property
    def tree_width_cap(self) -> int:
        model = self.config.model
        return max(model.width_cap, model.kappa) if self.regular else model.width_cap

    def require_rho(self) -> OffspringLaw:
        if self.rho is None:
            raise ConfigError("rho", f"model {self.config.model.name} has no offspring law")
        return self.rho

    def require_graph(self) -> GraphModel:
        if self.graph_model is None:
            raise ConfigError("model", "this run needs a finite graph model (er, regular or cm)")
        return self.graph_model

    def param(self, name: str, cast: Callable, default):
        raw = self.config.check_params.get(name)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"check.{name}", str(e))


def resolve(config: RunConfig, check_contracts: bool = False) -> ResolvedRun:
    """Build coefficients, the grid and the offspring law; ConfigError on failure.

    With check_contracts the drift and sigma are put through their randomized
    contract checks, which raise ContractViolationError.
    """
    coeffs = config.coefficients
    try:
        drift = build_drift(coeffs.drift, coeffs.drift_params)
    except InvalidArgumentError as e:
        raise ConfigError("drift", str(e))
    try:
        diffusion = build_diffusion(coeffs.sigma, coeffs.sigma_params)
    except InvalidArgumentError as e:
        raise ConfigError("sigma", str(e))
    try:
        init = build_init(coeffs.init, coeffs.init_params, coeffs.dim)
    except InvalidArgumentError as e:
        raise ConfigError("init", str(e))
    try:
        grid = TimeGrid(config.grid.T, config.grid.K)
    except InvalidArgumentError as e:
        raise ConfigError("T", str(e))

    if check_contracts:
        check_drift_contract(drift, coeffs.dim, config.seed)
        check_diffusion_contract(diffusion, coeffs.dim, config.seed)
        logger.info(f"Drift {drift.name} and sigma {diffusion.name} passed the contract checks")

    if config.kind == "verify" and config.check not in CHECKS:
        raise ConfigError("check", f"unknown check {config.check!r}; one of {sorted(CHECKS)}")

    warnings: List[str] = []
    model = config.model
    graph_model = None
    rho = None
    if model.name == "er":
        if model.p is None:
            raise ConfigError("p", "er model requires p")
        graph_model = GraphModel("er", model.n, mean_degree=model.n * model.p)
    elif model.name == "regular":
        graph_model = GraphModel("regular", model.n, kappa=model.kappa)
    elif model.name == "cm":
        degrees = model.degrees or _read_degree_file(model.degree_file)
        graph_model = GraphModel("cm", len(degrees), degrees=tuple(degrees))

    if model.name == "ugw":
        rho = _offspring_law(config, warnings)
    elif graph_model is not None and model.name != "regular":
        rho = graph_model.local_structure(model.rho.cap)

    return ResolvedRun(
        config=config,
        drift=drift,
        diffusion=diffusion,
        init=init,
        grid=grid,
        rho=rho,
        graph_model=graph_model,
        warnings=warnings,
    )


def _offspring_law(config: RunConfig, warnings: List[str]) -> OffspringLaw:
    spec = config.model.rho
    if spec.law == "poisson":
        return poisson_law(spec.theta, spec.cap)
    if spec.law == "delta":
        try:
            return delta_law(spec.k, spec.cap)
        except InvalidLawError as e:
            raise ConfigError("rho.k", str(e))
    try:
        law = explicit_law(spec.pmf, spec.cap)
    except ValueError as e:
        raise ConfigError("rho.pmf", str(e))
    if abs(law.removed_mass) > MASS_TOLERANCE:
        warnings.append(
            f"rho.pmf sums to {1.0 - law.removed_mass:.12g}; renormalized to total mass 1"
        )
    return law


def _read_degree_file(path: Optional[str]) -> List[int]:
    if not path:
        raise ConfigError("degrees", "cm model requires degrees or degree_file")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("degree_file", str(e))
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError as e:
        raise ConfigError("degree_file", str(e))


def config_digest(config: RunConfig) -> str:
    """sha256 of the resolved config, output directory and contract switch excluded"""
    payload = config.model_dump(mode="json", exclude={"out", "contracts"})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


# run kinds


def _tree_runs(r: ResolvedRun) -> List[TreeRun]:
    model, ens = r.config.model, r.config.ensemble
    rho = r.tree_law()
    return simulate_tree_ensemble(
        rho,
        depth_cap=model.depth_cap,
        width_cap=r.tree_width_cap,
        drift=r.drift,
        diffusion=r.diffusion,
        init=r.init,
        grid=r.grid,
        replicas=ens.trees,
        seed=r.seed,
        keep_depth=ens.keep_depth,
        check_growth=r.check_growth,
    )


def _local(r: ResolvedRun) -> LocalEnsemble:
    structure = r.local_structure()
    M, cfg = r.config.ensemble.M, r.config.estimator
    if isinstance(structure, OffspringLaw):
        return solve_local_ugw(
            structure,
            r.drift,
            r.diffusion,
            r.init,
            M,
            r.grid,
            cfg,
            r.seed,
            r.config.model.width_cap,
        )
    return solve_local_regular(structure, r.drift, r.diffusion, r.init, M, r.grid, cfg, r.seed)


def _simulate_graph(r: ResolvedRun, out: Path):
    graph = r.require_graph().sample(r.seed)
    bundle = simulate_system(graph, r.drift, r.diffusion, r.init, r.grid, r.seed, r.check_growth)
    write_graph(graph, out / "graph.txt")
    files = [
        out / "graph.txt",
        write_paths_csv(bundle, out / "paths.csv"),
        write_marginals_csv([bundle_marginals(bundle)], out / "marginals.csv"),
    ]
    return files, None


def _simulate_tree(r: ResolvedRun, out: Path):
    if r.config.model.name == "regular-tree":
        tree = regular_tree(r.config.model.kappa, r.config.model.depth_cap)
        bundle = simulate_system(tree, r.drift, r.diffusion, r.init, r.grid, r.seed, r.check_growth)
        write_tree(tree, out / "tree.txt")
        files = [
            out / "tree.txt",
            write_paths_csv(bundle, out / "paths.csv"),
            write_marginals_csv([bundle_marginals(bundle)], out / "marginals.csv"),
        ]
        return files, None

    runs = _tree_runs(r)
    roots = np.stack([run.path(UhnLabel.root()) for run in runs])
    files = [
        tree_runs_csv(runs, out / "paths.csv"),
        write_marginals_csv([root_marginals(roots, r.grid)], out / "marginals.csv"),
    ]
    return files, moment_bound_check([run.bundle for run in runs])


def _solve_local(r: ResolvedRun, out: Path):
    ensemble = _local(r)
    frames = [root_marginals(ensemble.states[:, 0], r.grid)]
    with_child = ensemble.degrees >= 1
    if ensemble.slots >= 1 and with_child.any():
        frames.append(root_marginals(ensemble.states[with_child, 1], r.grid, "child-1"))
    files = [
        ensemble_csv(ensemble, out / "paths.csv"),
        write_marginals_csv(frames, out / "marginals.csv"),
        write_diagnostics_jsonl(ensemble.diagnostics, out / "diagnostics.jsonl"),
    ]
    return files, None


def _verify(r: ResolvedRun, out: Path):
    return [], CHECKS[r.config.check](r)


KINDS = {
    "simulate-graph": _simulate_graph,
    "simulate-tree": _simulate_tree,
    "solve-local": _solve_local,
    "verify": _verify,
}


# verify checks


def _time(r: ResolvedRun) -> float:
    return r.param("t", float, r.grid.horizon)


def _check_size_bias(r):
    return checks.size_bias_check(r.tree_law())


def _check_reweight(r):
    name = r.param("h", str, "min5")
    if name not in H_FUNCTIONS:
        raise ConfigError(
            "check.h", f"unknown test function {name!r}; one of {sorted(H_FUNCTIONS)}"
        )
    return checks.reweight_identity_check(r.tree_law(), H_FUNCTIONS[name])


def _check_tilt(r):
    return checks.tilt_normalization_check(r.tree_law(), r.param("samples", int, 100_000), r.seed)


def _check_mass_transport(r):
    return checks.mass_transport_check(
        r.tree_law(),
        None,
        r.config.ensemble.trees,
        r.seed,
        r.drift,
        r.diffusion,
        r.init,
        r.grid,
        t=_time(r),
        width_cap=r.tree_width_cap,
    )


def _check_girsanov(r):
    return checks.girsanov_check(
        r.drift,
        r.diffusion,
        r.init,
        r.grid,
        r.config.ensemble.M,
        r.seed,
        r.param("tol", float, 0.03),
    )


def _check_entropy(r):
    try:
        reference = build_drift(r.param("reference", str, "zero"))
    except InvalidArgumentError as e:
        raise ConfigError("check.reference", str(e))
    return checks.relative_entropy_check(
        r.drift, reference, r.diffusion, r.grid, r.config.ensemble.M, r.init, r.seed
    )


def _check_mrf2(r):
    return checks.mrf2_test(
        _tree_runs(r),
        k=r.param("child", int, 1),
        t=_time(r),
        order=r.param("order", int, 2),
        bins=r.param("bins", int, None),
        min_occupancy=r.param("min_occupancy", int, 20),
        permutations=r.param("permutations", int, 200),
        lags=r.config.estimator.lags,
        seed=r.seed,
    )


def _check_reroot(r):
    return reroot_gamma_check(
        _tree_runs(r),
        r.grid.index_of(_time(r)),
        k=r.param("child", int, 2),
        cfg=r.config.estimator,
        panel=r.param("panel", int, 50),
        bootstrap=r.param("bootstrap", int, 20),
        seed=r.seed,
    )


def _check_exchangeability(r):
    return checks.exchangeability_check(
        _local(r), r.param("i", int, 1), r.param("j", int, 2), _time(r)
    )


def _check_pair_symmetry(r):
    return checks.pair_symmetry_check(_local(r), _time(r))


def _check_tree_vs_local(r):
    joint = r.param("joint", lambda v: v.lower() in ("1", "true", "yes"), True)
    return tree_vs_local_check(
        _tree_runs(r), _local(r), _time(r), joint=joint, tol=r.param("tol", float, 0.08)
    )


def _check_local_limit(r):
    sizes = r.param("sizes", lambda v: [int(x) for x in v.split(",")], [250, 2000])
    return local_limit_experiment(
        r.require_graph(),
        r.drift,
        r.diffusion,
        r.init,
        r.grid,
        _local(r),
        sizes=sizes,
        trials=r.config.ensemble.trials,
        seed=r.seed,
        tol=r.param("tol", float, 0.08),
        require_decrease=r.param("decrease", lambda v: v.lower() in ("1", "true", "yes"), True),
    )


def _check_moment_bound(r):
    return moment_bound_check([run.bundle for run in _tree_runs(r)])


def _check_chaos(r):
    graph = r.require_graph().sample(r.seed)
    bundle = simulate_system(graph, r.drift, r.diffusion, r.init, r.grid, r.seed, r.check_growth)
    return checks.chaos_check(bundle, graph, _time(r), r.param("pairs", int, 1000), r.seed)


CHECKS: Dict[str, Callable[[ResolvedRun], TestReport]] = {
    "size-bias": _check_size_bias,
    "reweight-identity": _check_reweight,
    "tilt-normalization": _check_tilt,
    "mass-transport": _check_mass_transport,
    "girsanov": _check_girsanov,
    "relative-entropy": _check_entropy,
    "mrf2": _check_mrf2,
    "reroot-gamma": _check_reroot,
    "exchangeability": _check_exchangeability,
    "pair-symmetry": _check_pair_symmetry,
    "tree-vs-local": _check_tree_vs_local,
    "local-limit": _check_local_limit,
    "moment-bound": _check_moment_bound,
    "chaos": _check_chaos,
}


# execution


@contextmanager
def output_lock(out: Path):
    """Exclusive lock file; one run per output directory"""
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLockedError(f"{out} is locked by another run ({lock})")
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield lock
    finally:
        lock.unlink(missing_ok=True)


def qualified(error: BaseException) -> str:
    """Error message prefixed with the module that raised it"""
    frames = traceback.extract_tb(error.__traceback__)
    module = Path(frames[-1].filename).stem if frames else "pipeline"
    return f"{module}: {error}"


def run(config: RunConfig, catalog: bool = True) -> RunManifest:
    """Execute one run and write its outputs and manifest.json into config.out"""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config)
    started = datetime.now(timezone.utc)
    manifest = RunManifest(
        run_id=f"{digest[:12]}-{started:%Y%m%dT%H%M%S%f}",
        kind=config.kind,
        check=config.check,
        config=config.model_dump(mode="json"),
        config_digest=digest,
        tool_version=__version__,
        started_at=started,
        warnings=list(config.warnings),
    )
    logger.info(f"Starting run {manifest.run_id} ({config.kind}) into {out}")

    report: Optional[TestReport] = None
    error: Optional[str] = None
    crash: Optional[Exception] = None
    with output_lock(out):
        files: List[Path] = []
        try:
            resolved = resolve(config, check_contracts=config.contracts)
            files, report = KINDS[config.kind](resolved, out)
            if report is not None:
                report.config_digest = digest
                report.seeds = report.seeds or [config.seed]
                files.append(write_report_json(report, out / "report.json"))
                manifest.verdict = report.verdict
                if report.verdict == Verdict.FAIL:
                    manifest.exit_status = EXIT_FAILED
                elif report.verdict == Verdict.INCONCLUSIVE:
                    manifest.warnings.append(f"{report.name} was inconclusive")
        except ConfigError as e:
            error = str(e)
            logger.error(f"Run {manifest.run_id} misconfigured: {error}")
            manifest.exit_status = EXIT_CONFIG
            manifest.warnings.append(error)
        except UgwError as e:
            error = qualified(e)
            logger.error(f"Run {manifest.run_id} failed: {error}", exc_info=True)
            manifest.exit_status = EXIT_ERROR
            manifest.warnings.append(error)
        except Exception as e:
            crash = e
            error = f"internal error: {qualified(e)}"
            logger.error(f"Run {manifest.run_id} crashed: {error}", exc_info=True)
            manifest.exit_status = EXIT_ERROR
            manifest.warnings.append(error)

        manifest.files = [file_digest(path, out) for path in sorted(set(files))]
        manifest.finished_at = datetime.now(timezone.utc)
        manifest_text = manifest.model_dump_json(indent=2) + "\n"
        (out / "manifest.json").write_text(manifest_text, encoding="utf-8")

    if catalog:
        record_run(manifest, out, report, error)
    if crash is not None:
        raise crash
    logger.info(
        f"Run {manifest.run_id} finished with status {manifest.exit_status}, "
        f"{len(manifest.files)} files"
    )
    return manifest


def record_run(
    manifest: RunManifest, out: Path, report: Optional[TestReport], error: Optional[str]
) -> None:
    """Add the run to the catalog; catalog failures never fail the run"""
    from sqlalchemy.exc import SQLAlchemyError

    from src.db.repository import ReportRepository, RunRepository
    from src.db.session import get_db_context, init_db

    try:
        init_db()
        with get_db_context() as db:
            RunRepository.record_run(db, manifest, str(out.resolve()), error)
            if report is not None:
                ReportRepository.create_report(db, manifest.run_id, report)
    except SQLAlchemyError as e:
        logger.warning(f"Could not record run {manifest.run_id} in the catalog: {e}")
