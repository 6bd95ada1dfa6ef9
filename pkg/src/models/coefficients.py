"""Drift, diffusion and initial-law contracts consumed by the simulation engine.

Every callable works on batches. A path window is an array of shape
``(m, L, d)`` holding the last ``L`` grid values (ending at the current step)
of ``m`` paths; builders that only need the present value read ``x[:, -1]``.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from src.utils import rng
from src.utils.errors import InvalidArgumentError, SingularDiffusionError

PairFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
LoneFn = Callable[[float, np.ndarray], np.ndarray]
FeatureFn = Callable[[np.ndarray], np.ndarray]
OuterFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
MatrixFn = Callable[[float, np.ndarray], np.ndarray]


def window(states: np.ndarray, step: int, memory: Optional[int]) -> np.ndarray:
    """Slice of the stored prefix visible to a coefficient at `step`"""
    start = 0 if memory is None else max(0, step - memory)
    return states[:, start : step + 1, :]


@dataclass(frozen=True)
class DriftSpec:
    """Interaction drift b(t, x, <x_v : v in A>).

    Two shapes are supported. A pairwise drift averages ``pair(t, x, x_v)``
    over the neighbors; a measure drift averages ``feature(x_v)`` over the
    neighbors and hands the mean to ``outer``. ``empty_case`` is used when A
    is empty.
    """

    name: str
    empty_case: LoneFn
    pair: Optional[PairFn] = None
    feature: Optional[FeatureFn] = None
    outer: Optional[OuterFn] = None
    growth_const: float = 1.0
    memory: Optional[int] = 0
    params: Dict[str, float] = field(default_factory=dict)
    is_zero: bool = False

    def __post_init__(self):
        if self.pair is None and (self.feature is None or self.outer is None):
            raise InvalidArgumentError(f"drift {self.name} needs pair or feature+outer")

    @property
    def is_pairwise(self) -> bool:
        return self.pair is not None

    def evaluate(
        self,
        step: int,
        t: float,
        states: np.ndarray,
        rows: np.ndarray,
        indptr: np.ndarray,
        indices: np.ndarray,
    ) -> np.ndarray:
        """Drift of each row given its neighbor collection in CSR form.

        ``indices[indptr[i]:indptr[i+1]]`` lists the rows of ``states`` that
        form the neighbor collection of ``rows[i]``.
        """
        rows = np.asarray(rows, dtype=np.int64)
        dim = states.shape[2]
        if self.is_zero:
            return np.zeros((rows.size, dim))

        win = window(states, step, self.memory)
        x = win[rows]
        degrees = np.diff(indptr)
        out = np.empty((rows.size, dim))

        empty = degrees == 0
        if empty.any():
            out[empty] = self.empty_case(t, x[empty])
        full = ~empty
        if full.any():
            owner = np.repeat(np.arange(rows.size), degrees)
            starts = (indptr[:-1] - indptr[0])[full]
            y = win[np.asarray(indices, dtype=np.int64)]
            if self.is_pairwise:
                terms = self.pair(t, x[owner], y)
                out[full] = np.add.reduceat(terms, starts, axis=0) / degrees[full, None]
            else:
                feats = self.feature(y)
                means = np.add.reduceat(feats, starts, axis=0) / degrees[full, None]
                out[full] = self.outer(t, x[full], means)
        return out

    def pairwise(self, step: int, t: float, states: np.ndarray, rows, others) -> np.ndarray:
        """The pair kernel between rows[i] and others[i]"""
        if not self.is_pairwise:
            raise InvalidArgumentError(f"drift {self.name} is not pairwise")
        win = window(states, step, self.memory)
        return self.pair(t, win[np.asarray(rows)], win[np.asarray(others)])


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion matrix sigma(t, x) with operator-norm bounds"""

    name: str
    sigma_max: float
    sigma_inv_max: float
    diagonal: Optional[MatrixFn] = None
    matrix: Optional[MatrixFn] = None
    memory: Optional[int] = 0
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if (self.diagonal is None) == (self.matrix is None):
            raise InvalidArgumentError(
                f"diffusion {self.name} needs exactly one of diagonal/matrix"
            )

    def evaluate(self, step: int, t: float, states: np.ndarray, rows) -> np.ndarray:
        """sigma as a stack of (d, d) matrices"""
        x = window(states, step, self.memory)[np.asarray(rows)]
        if self.diagonal is not None:
            diag = self.diagonal(t, x)
            out = np.zeros(diag.shape + (diag.shape[1],))
            idx = np.arange(diag.shape[1])
            out[:, idx, idx] = diag
            return out
        return self.matrix(t, x)

    def apply(self, step: int, t: float, states: np.ndarray, rows, vectors: np.ndarray):
        """sigma @ v per row"""
        x = window(states, step, self.memory)[np.asarray(rows)]
        if self.diagonal is not None:
            return self.diagonal(t, x) * vectors
        return np.einsum("mij,mj->mi", self.matrix(t, x), vectors)

    def solve(self, step: int, t: float, states: np.ndarray, rows, vectors: np.ndarray):
        """sigma^{-1} @ v per row"""
        x = window(states, step, self.memory)[np.asarray(rows)]
        if self.diagonal is not None:
            diag = self.diagonal(t, x)
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                raise SingularDiffusionError(step)
            return vectors / diag
        try:
            return np.linalg.solve(self.matrix(t, x), vectors[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise SingularDiffusionError(step) from e


@dataclass(frozen=True)
class InitialLaw:
    """i.i.d. law of X_v(0)"""

    name: str
    dim: int
    draw: Callable[[np.random.Generator, int], np.ndarray]
    second_moment: float
    support_radius: Optional[float] = None
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def bounded(self) -> bool:
        return self.support_radius is not None

    def sample(self, seed: int, keys: Sequence[int], prefix: Sequence[int] = ()) -> np.ndarray:
        """One draw per key from the key's own INIT stream"""
        out = np.empty((len(keys), self.dim))
        for i, key in enumerate(keys):
            out[i] = self.draw(rng.stream(seed, rng.INIT, *prefix, key), self.dim)
        return out
