from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.utils.errors import InvalidArgumentError, InvalidLawError
from src.utils.rng import label_hash

ROOT_TOKEN = "o"


@dataclass(frozen=True, order=False)
class UhnLabel:
    """Ulam-Harris-Neveu vertex label; the empty digit sequence is the root"""

    digits: Tuple[int, ...] = ()

    def __post_init__(self):
        if any(int(d) < 1 for d in self.digits):
            raise InvalidArgumentError(f"label digits must be positive: {self.digits}")

    @classmethod
    def root(cls) -> "UhnLabel":
        return cls(())

    @classmethod
    def parse(cls, text: str) -> "UhnLabel":
        """Inverse of str(): 'o' is the root, otherwise dot-separated digits"""
        text = text.strip()
        if text == ROOT_TOKEN:
            return cls(())
        return cls(tuple(int(part) for part in text.split(".")))

    @property
    def is_root(self) -> bool:
        return not self.digits

    @property
    def depth(self) -> int:
        return len(self.digits)

    def parent(self) -> "UhnLabel":
        if self.is_root:
            raise InvalidArgumentError("the root has no parent")
        return UhnLabel(self.digits[:-1])

    def child(self, k: int) -> "UhnLabel":
        return UhnLabel(self.digits + (int(k),))

    def concat(self, other: "UhnLabel") -> "UhnLabel":
        return UhnLabel(self.digits + other.digits)

    def __add__(self, other: "UhnLabel") -> "UhnLabel":
        return self.concat(other)

    def is_prefix_of(self, other: "UhnLabel") -> bool:
        return other.digits[: len(self.digits)] == self.digits

    def sort_key(self) -> Tuple[int, Tuple[int, ...]]:
        """Breadth-first order: by depth, then lexicographically"""
        return (len(self.digits), self.digits)

    def __lt__(self, other: "UhnLabel") -> bool:
        return self.sort_key() < other.sort_key()

    def stream_key(self) -> int:
        return label_hash(self.digits)

    def __str__(self) -> str:
        return ROOT_TOKEN if self.is_root else ".".join(str(d) for d in self.digits)


@dataclass(frozen=True)
class OffspringLaw:
    """Finitely supported offspring distribution on {0, ..., truncation_cap}"""

    pmf: np.ndarray
    truncation_cap: int
    removed_mass: float = 0.0
    name: str = "explicit"

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise InvalidLawError("pmf must be a non-empty vector")
        if pmf.size > self.truncation_cap + 1:
            raise InvalidLawError("pmf support exceeds truncation cap")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise InvalidLawError("pmf masses must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise InvalidLawError(f"pmf sums to {pmf.sum():.15f}, expected 1")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.pmf.size)

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.support**2, self.pmf))

    @property
    def truncation_bias(self) -> float:
        """Mass removed (or added, if negative) before renormalization"""
        return self.removed_mass

    def prob(self, k: int) -> float:
        return float(self.pmf[k]) if 0 <= k < self.pmf.size else 0.0

    def is_delta(self) -> Optional[int]:
        """The atom k if the law is δ_k, else None"""
        atoms = np.flatnonzero(self.pmf)
        if atoms.size == 1 and self.pmf[atoms[0]] == 1.0:
            return int(atoms[0])
        return None

    def sample(self, rng: np.random.Generator, size: int = None) -> np.ndarray:
        """Inverse-CDF draws, deterministic given the generator state"""
        cdf = np.cumsum(self.pmf)
        cdf[-1] = 1.0
        u = rng.random(size)
        return np.searchsorted(cdf, u, side="right").astype(np.int64)


@dataclass(frozen=True)
class FiniteGraph:
    """Simple undirected graph on vertices 0..n-1 given by sorted neighbor lists"""

    n: int
    adjacency: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise InvalidArgumentError("adjacency length must equal n")
        for v, nbrs in enumerate(self.adjacency):
            if list(nbrs) != sorted(set(nbrs)):
                raise InvalidArgumentError(f"neighbor list of {v} not sorted/unique")
            if v in nbrs:
                raise InvalidArgumentError(f"self-loop at {v}")
            for u in nbrs:
                if v not in self.adjacency[u]:
                    raise InvalidArgumentError(f"asymmetric edge {v}-{u}")

    @classmethod
    def from_edges(cls, n: int, edges) -> "FiniteGraph":
        nbrs: List[set] = [set() for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                continue
            nbrs[u].add(v)
            nbrs[v].add(u)
        return cls(n=n, adjacency=tuple(tuple(sorted(s)) for s in nbrs))

    @classmethod
    def from_networkx(cls, graph: nx.Graph, n: int = None) -> "FiniteGraph":
        n = graph.number_of_nodes() if n is None else n
        return cls.from_edges(n, graph.edges())

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges())
        return graph

    def edges(self) -> Iterator[Tuple[int, int]]:
        for v, nbrs in enumerate(self.adjacency):
            for u in nbrs:
                if v < u:
                    yield (v, u)

    @property
    def edge_count(self) -> int:
        return sum(len(nbrs) for nbrs in self.adjacency) // 2

    def degrees(self) -> np.ndarray:
        return np.array([len(nbrs) for nbrs in self.adjacency], dtype=np.int64)

    def neighbors(self, v: int) -> Tuple[int, ...]:
        return self.adjacency[v]

    def frame(self) -> "Frame":
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(self.degrees())
        indices = np.fromiter(
            (u for nbrs in self.adjacency for u in nbrs), dtype=np.int64, count=int(indptr[-1])
        )
        return Frame(
            keys=np.arange(self.n, dtype=np.int64),
            indptr=indptr,
            indices=indices,
            membership=np.ones(self.n, dtype=bool),
            names=[str(v) for v in range(self.n)],
        )


@dataclass
class SampledTree:
    """Prefix-closed subset of labels with offspring counts c_v"""

    offspring_counts: Dict[UhnLabel, int]
    depth_cap: int
    width_cap: int
    _members: Optional[List[UhnLabel]] = field(default=None, repr=False, compare=False)

    @property
    def members(self) -> List[UhnLabel]:
        if self._members is None:
            self._members = sorted(self.offspring_counts)
        return self._members

    def __contains__(self, label: UhnLabel) -> bool:
        return label in self.offspring_counts

    def __len__(self) -> int:
        return len(self.offspring_counts)

    def count(self, label: UhnLabel) -> int:
        return self.offspring_counts.get(label, 0)

    def children(self, label: UhnLabel) -> List[UhnLabel]:
        return [label.child(k) for k in range(1, self.count(label) + 1)]

    def neighbors(self, label: UhnLabel) -> List[UhnLabel]:
        """N_v(T): parent (when not root) and children of a member"""
        if label not in self:
            return []
        nbrs = [] if label.is_root else [label.parent()]
        return nbrs + self.children(label)

    def depth(self, label: UhnLabel) -> int:
        return label.depth

    def height(self) -> int:
        return max(label.depth for label in self.offspring_counts)

    def to_graph(self) -> Tuple[FiniteGraph, List[UhnLabel]]:
        """Index-based copy of the tree; vertex i carries members[i]"""
        labels = self.members
        index = {label: i for i, label in enumerate(labels)}
        edges = [(index[label.parent()], i) for i, label in enumerate(labels) if not label.is_root]
        return FiniteGraph.from_edges(len(labels), edges), list(labels)

    def validate(self) -> None:
        """Exhaustive scan of the tree invariants"""
        root = UhnLabel.root()
        if root not in self:
            raise InvalidArgumentError("root missing from tree")
        for label, count in self.offspring_counts.items():
            if label.depth > self.depth_cap:
                raise InvalidArgumentError(f"{label} deeper than depth cap")
            if any(d > self.width_cap for d in label.digits):
                raise InvalidArgumentError(f"{label} wider than width cap")
            if not label.is_root:
                parent = label.parent()
                if parent not in self or not 1 <= label.digits[-1] <= self.count(parent):
                    raise InvalidArgumentError(f"{label} violates the c_v membership rule")
            for k in range(1, count + 1):
                if label.child(k) not in self:
                    raise InvalidArgumentError(f"child {label.child(k)} missing")
            if label.depth == self.depth_cap and count:
                raise InvalidArgumentError(f"{label} at depth cap has children")

    def frame(self, with_absent: bool = True) -> "Frame":
        """Index frame over members plus each member's first absent child"""
        labels = list(self.members)
        if with_absent:
            for label in self.members:
                k = self.count(label) + 1
                if label.depth < self.depth_cap and k <= self.width_cap:
                    labels.append(label.child(k))
        labels.sort()
        index = {label: i for i, label in enumerate(labels)}
        indptr = np.zeros(len(labels) + 1, dtype=np.int64)
        indices: List[int] = []
        for i, label in enumerate(labels):
            indices.extend(index[u] for u in self.neighbors(label))
            indptr[i + 1] = len(indices)
        return Frame(
            keys=np.array([label.stream_key() for label in labels], dtype=np.int64),
            indptr=indptr,
            indices=np.asarray(indices, dtype=np.int64),
            membership=np.array([label in self for label in labels], dtype=bool),
            names=[str(label) for label in labels],
            labels=labels,
        )


@dataclass
class Frame:
    """Index-based view of a topology consumed by the simulation engine"""

    keys: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    membership: np.ndarray
    names: List[str]
    labels: Optional[List[UhnLabel]] = None

    @property
    def n(self) -> int:
        return int(self.keys.size)

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def index_of(self, label) -> int:
        if self.labels is None:
            return int(label)
        return self.labels.index(label)

    def relabel(self, perm: Sequence[int]) -> "Frame":
        """Frame with vertex i moved to position perm[i]"""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indices: List[int] = []
        for new in range(self.n):
            old = inv[new]
            indices.extend(sorted(int(perm[u]) for u in self.neighbors(old)))
            indptr[new + 1] = len(indices)
        return Frame(
            keys=self.keys[inv],
            indptr=indptr,
            indices=np.asarray(indices, dtype=np.int64),
            membership=self.membership[inv],
            names=[self.names[i] for i in inv],
            labels=None if self.labels is None else [self.labels[i] for i in inv],
        )

    @staticmethod
    def disjoint_union(frames: Sequence["Frame"]) -> Tuple["Frame", np.ndarray]:
        """Concatenate frames; returns the union and the offset of each part"""
        offsets = np.zeros(len(frames) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([f.n for f in frames])
        edge_offsets = np.zeros(len(frames) + 1, dtype=np.int64)
        edge_offsets[1:] = np.cumsum([f.indices.size for f in frames])
        indptr = np.concatenate(
            [[0]] + [f.indptr[1:] + edge_offsets[i] for i, f in enumerate(frames)]
        ).astype(np.int64)
        indices = np.concatenate(
            [f.indices + offsets[i] for i, f in enumerate(frames)] or [np.zeros(0, np.int64)]
        ).astype(np.int64)
        union = Frame(
            keys=np.concatenate([f.keys for f in frames]),
            indptr=indptr,
            indices=indices,
            membership=np.concatenate([f.membership for f in frames]),
            names=[name for f in frames for name in f.names],
        )
        return union, offsets
