import logging
from collections import defaultdict, deque
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import networkx as nx
import numpy as np
from scipy import stats

from src.models.topology import FiniteGraph, OffspringLaw, SampledTree, UhnLabel
from src.utils import rng
from src.utils.errors import InvalidArgumentError, InvalidLawError, RetryExhaustedError

logger = logging.getLogger(__name__)

DEFAULT_CAP = 64
NORMALIZATION_TOL = 1e-12
FULL_PAIRING_ATTEMPTS = 100
STUB_REDRAW_ROUNDS = 1000

Topology = Union[FiniteGraph, SampledTree, nx.Graph]


def _renormalized(pmf: np.ndarray, cap: int, name: str) -> OffspringLaw:
    pmf = np.asarray(pmf, dtype=float)[: cap + 1]
    total = float(pmf.sum())
    if total <= 0:
        raise InvalidLawError(f"{name} law has no mass below the truncation cap")
    removed = 1.0 - total
    if abs(removed) > NORMALIZATION_TOL:
        logger.warning(f"Renormalizing {name} law: mass {total:.15f} rescaled to 1")
    pmf = pmf / total
    # trailing zeros carry no information
    last = np.flatnonzero(pmf)
    pmf = pmf[: last[-1] + 1] if last.size else pmf[:1]
    return OffspringLaw(pmf=pmf, truncation_cap=cap, removed_mass=removed, name=name)


def poisson_law(theta: float, cap: int = DEFAULT_CAP) -> OffspringLaw:
    """Poisson(theta) truncated at cap and renormalized"""
    if not theta > 0:
        raise InvalidLawError("poisson mean must be positive")
    return _renormalized(stats.poisson.pmf(np.arange(cap + 1), theta), cap, f"poisson({theta:g})")


def delta_law(k: int, cap: int = DEFAULT_CAP) -> OffspringLaw:
    if k < 0 or k > cap:
        raise InvalidLawError(f"delta atom {k} outside [0, {cap}]")
    pmf = np.zeros(k + 1)
    pmf[k] = 1.0
    return OffspringLaw(pmf=pmf, truncation_cap=cap, name=f"delta({k})")


def explicit_law(pmf: Iterable[float], cap: int = DEFAULT_CAP) -> OffspringLaw:
    """Law from explicit masses; renormalized (with a warning) when they miss 1"""
    pmf = np.asarray(list(pmf), dtype=float)
    if pmf.size == 0 or np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
        raise InvalidLawError("explicit pmf masses must be finite and non-negative")
    return _renormalized(pmf, cap, "explicit")


def size_biased(rho: OffspringLaw) -> OffspringLaw:
    """rho_hat(k) = (k+1) rho(k+1) / sum_n n rho(n)"""
    mean = rho.mean
    if mean <= 0:
        raise InvalidLawError("size-biasing needs a nonzero first moment")
    if rho.pmf.size == 1:
        raise InvalidLawError("size-biasing needs mass above zero")
    k = np.arange(1, rho.pmf.size)
    pmf = k * rho.pmf[1:] / mean
    total = pmf.sum()
    if total != 1.0:
        pmf = pmf / total
    return OffspringLaw(
        pmf=pmf,
        truncation_cap=max(0, rho.truncation_cap - 1),
        removed_mass=rho.removed_mass,
        name=f"size-biased {rho.name}",
    )


def regular_tree(kappa: int, depth_cap: int) -> SampledTree:
    """The kappa-regular tree cut at depth_cap"""
    if kappa < 1 or depth_cap < 0:
        raise InvalidArgumentError("regular tree needs kappa >= 1, depth_cap >= 0")
    counts: Dict[UhnLabel, int] = {}
    frontier = [UhnLabel.root()]
    while frontier:
        nxt = []
        for label in frontier:
            c = 0 if label.depth == depth_cap else (kappa if label.is_root else kappa - 1)
            counts[label] = c
            nxt.extend(label.child(i) for i in range(1, c + 1))
        frontier = nxt
    return SampledTree(offspring_counts=counts, depth_cap=depth_cap, width_cap=kappa)


def sample_ugw(
    rho: OffspringLaw, depth_cap: int, width_cap: int, seed: int, replica: int = 0
) -> SampledTree:
    """Breadth-first UGW(rho) sample; one TREE stream per (seed, replica)"""
    if depth_cap < 1 or width_cap < 1:
        raise InvalidArgumentError("depth_cap and width_cap must be >= 1")
    rho_hat = size_biased(rho) if rho.mean > 0 else None
    gen = rng.stream(seed, rng.TREE, replica)

    counts: Dict[UhnLabel, int] = {}
    queue = deque([UhnLabel.root()])
    while queue:
        label = queue.popleft()
        if label.depth == depth_cap:
            counts[label] = 0
            continue
        law = rho if label.is_root else rho_hat
        c = 0 if law is None else int(min(law.sample(gen), width_cap))
        counts[label] = c
        queue.extend(label.child(k) for k in range(1, c + 1))
    return SampledTree(offspring_counts=counts, depth_cap=depth_cap, width_cap=width_cap)


def first_generation(
    rho: OffspringLaw, replicas: int, width_cap: int, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Root degrees ~ rho (clamped) and independent auxiliary counts C_hat ~ rho_hat"""
    degrees = np.minimum(rho.sample(rng.stream(seed, rng.TREE, 0), replicas), width_cap)
    if rho.mean > 0:
        aux = size_biased(rho).sample(rng.stream(seed, rng.TREE, 1), replicas)
    else:
        aux = np.zeros(replicas, dtype=np.int64)
    return degrees.astype(np.int64), aux.astype(np.int64)


def sample_erdos_renyi(n: int, p: float, seed: int) -> FiniteGraph:
    """G(n, p) via the networkx geometric-skip generator"""
    if not 0 < p < 1:
        raise InvalidArgumentError(f"edge probability must lie in (0, 1), got {p}")
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    graph = nx.fast_gnp_random_graph(n, p, seed=rng.child_seed(seed, rng.GRAPH))
    return FiniteGraph.from_networkx(graph, n)


def _full_pairing(stubs: np.ndarray, gen: np.random.Generator) -> Optional[Set[Tuple[int, int]]]:
    shuffled = gen.permutation(stubs)
    edges: Set[Tuple[int, int]] = set()
    for s1, s2 in zip(shuffled[0::2], shuffled[1::2]):
        s1, s2 = (int(s1), int(s2)) if s1 < s2 else (int(s2), int(s1))
        if s1 == s2 or (s1, s2) in edges:
            return None
        edges.add((s1, s2))
    return edges


def _stub_redraw(
    stubs: np.ndarray, gen: np.random.Generator, max_rounds: int = STUB_REDRAW_ROUNDS
) -> Optional[Set[Tuple[int, int]]]:
    """Pair stubs, then re-pair only the ones that produced loops or repeats.

    None when the leftovers are stuck or still unpaired after max_rounds.
    """
    edges: Set[Tuple[int, int]] = set()
    pending = stubs.tolist()
    for _ in range(max_rounds):
        if not pending:
            return edges
        leftover: Dict[int, int] = defaultdict(int)
        shuffled = gen.permutation(pending)
        for s1, s2 in zip(shuffled[0::2], shuffled[1::2]):
            s1, s2 = (int(s1), int(s2)) if s1 < s2 else (int(s2), int(s1))
            if s1 != s2 and (s1, s2) not in edges:
                edges.add((s1, s2))
            else:
                leftover[s1] += 1
                leftover[s2] += 1
        if leftover and not any(
            a < b and (a, b) not in edges for a in leftover for b in leftover
        ):
            return None
        pending = [v for v, count in sorted(leftover.items()) for _ in range(count)]
    return None if pending else edges


def sample_regular(
    n: int, kappa: int, seed: int, max_attempts: int = 1000, max_rounds: int = STUB_REDRAW_ROUNDS
) -> FiniteGraph:
    """Random kappa-regular simple graph by pairing with rejection.

    Each stub re-draw attempt is capped at max_rounds re-pairings, so the whole
    search stops after max_attempts * max_rounds rounds with RetryExhaustedError.
    """
    if (n * kappa) % 2:
        raise InvalidArgumentError("n * kappa must be even")
    if kappa < 0 or n < kappa + 1:
        raise InvalidArgumentError(f"need n >= kappa + 1, got n={n}, kappa={kappa}")

    gen = rng.stream(seed, rng.GRAPH)
    stubs = np.repeat(np.arange(n), kappa)
    for attempt in range(FULL_PAIRING_ATTEMPTS):
        edges = _full_pairing(stubs, gen)
        if edges is not None:
            return FiniteGraph.from_edges(n, sorted(edges))

    logger.info(f"Full pairing failed {FULL_PAIRING_ATTEMPTS} times; switching to stub re-draw")
    for attempt in range(max_attempts):
        edges = _stub_redraw(stubs, gen, max_rounds)
        if edges is not None:
            return FiniteGraph.from_edges(n, sorted(edges))
    raise RetryExhaustedError(f"no simple {kappa}-regular graph on {n} vertices found")


def sample_configuration_model(n: int, degrees: Iterable[int], seed: int) -> FiniteGraph:
    """Erased configuration model: loops and duplicate edges removed"""
    degrees = [int(d) for d in degrees]
    if len(degrees) != n:
        raise InvalidArgumentError(f"degree sequence has {len(degrees)} entries, expected {n}")
    if any(d < 0 for d in degrees):
        raise InvalidArgumentError("degrees must be non-negative")
    if sum(degrees) % 2:
        raise InvalidArgumentError("degree sum must be even")

    multigraph = nx.configuration_model(degrees, seed=rng.child_seed(seed, rng.GRAPH))
    simple = nx.Graph(multigraph)
    simple.remove_edges_from(list(nx.selfloop_edges(simple)))
    graph = FiniteGraph.from_networkx(simple, n)

    erased = sum(degrees) - 2 * graph.edge_count
    if erased:
        logger.warning(f"Configuration model erased {erased} of {sum(degrees)} stubs")
    return graph


def _as_networkx(topology: Topology) -> nx.Graph:
    if isinstance(topology, nx.Graph):
        return topology
    if isinstance(topology, FiniteGraph):
        return topology.to_networkx()
    graph = nx.Graph()
    graph.add_nodes_from(topology.members)
    graph.add_edges_from((label.parent(), label) for label in topology.members if not label.is_root)
    return graph


def boundary(vertices: Iterable, topology: Topology, order: int = 1) -> Set:
    """Vertices at distance exactly 1 (order 1) or 1..2 (order 2) from the set"""
    if order not in (1, 2):
        raise InvalidArgumentError("boundary order must be 1 or 2")
    graph = _as_networkx(topology)
    vertices = set(vertices)
    missing = [v for v in vertices if v not in graph]
    if missing:
        raise InvalidArgumentError(f"vertices not in topology: {missing[:5]}")

    first = set(nx.node_boundary(graph, vertices))
    if order == 1:
        return first
    return first | set(nx.node_boundary(graph, vertices | first))


def write_tree(tree: SampledTree, path: Union[str, Path]) -> None:
    """One line per member: label<TAB>offspring_count"""
    lines = [f"# depth_cap={tree.depth_cap} width_cap={tree.width_cap}"]
    lines += [f"{label}\t{tree.count(label)}" for label in tree.members]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tree(path: Union[str, Path]) -> SampledTree:
    counts: Dict[UhnLabel, int] = {}
    caps = {"depth_cap": 0, "width_cap": 0}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                if key in caps:
                    caps[key] = int(value)
            continue
        label, count = line.split("\t")
        counts[UhnLabel.parse(label)] = int(count)
    tree = SampledTree(offspring_counts=counts, **caps)
    tree.validate()
    return tree


def write_graph(graph: FiniteGraph, path: Union[str, Path]) -> None:
    """One line per vertex: vertex<TAB>neighbor,neighbor,..."""
    lines = [f"{v}\t{','.join(str(u) for u in nbrs)}" for v, nbrs in enumerate(graph.adjacency)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph(path: Union[str, Path]) -> FiniteGraph:
    rows: List[Tuple[int, ...]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        vertex, _, nbrs = line.partition("\t")
        if int(vertex) != len(rows):
            raise InvalidArgumentError(f"graph file out of order at vertex {vertex}")
        rows.append(tuple(int(u) for u in nbrs.split(",") if u))
    return FiniteGraph(n=len(rows), adjacency=tuple(rows))
