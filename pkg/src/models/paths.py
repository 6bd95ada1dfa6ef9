from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.models.topology import Frame
from src.utils.errors import InvalidArgumentError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_j = j*h on [0, T]"""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgumentError("grid needs at least one step")
        if not self.horizon > 0 or not np.isfinite(self.horizon):
            raise InvalidArgumentError("grid horizon must be positive and finite")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        times = np.arange(self.steps + 1) * self.h
        times[-1] = self.horizon
        return times

    def time(self, step: int) -> float:
        return self.horizon if step == self.steps else step * self.h

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of t; raises when t is off-grid"""
        j = int(round(t / self.h))
        if j < 0 or j > self.steps or abs(self.time(j) - t) > tol * max(1.0, self.horizon):
            raise InvalidArgumentError(f"time {t} is not on the grid (h={self.h})")
        return j

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


@dataclass
class PathBundle:
    """Per-vertex trajectories on a grid; states has shape (n, K+1, d)"""

    grid: TimeGrid
    states: np.ndarray
    membership: np.ndarray
    names: List[str]
    frame: Optional[Frame] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def at(self, t: float) -> np.ndarray:
        return self.states[:, self.grid.index_of(t), :]

    def prefix(self, step: int) -> np.ndarray:
        """Read-only view of all paths up to and including step"""
        view = self.states[:, : step + 1, :]
        view.flags.writeable = False
        return view

    def running_max_sq(self) -> np.ndarray:
        """Squared running sup-norm ||X_v||^2_{*,T} per vertex"""
        norms = np.linalg.norm(self.states, axis=2)
        return np.max(norms, axis=1) ** 2

    def restrict(self, rows: np.ndarray) -> "PathBundle":
        rows = np.asarray(rows, dtype=np.int64)
        return PathBundle(
            grid=self.grid,
            states=self.states[rows],
            membership=self.membership[rows],
            names=[self.names[i] for i in rows],
        )

    def row_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass
class PathWeight:
    """Girsanov log-density per path"""

    log_weight: np.ndarray

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weight)

    def normalized(self) -> np.ndarray:
        shifted = np.exp(self.log_weight - np.max(self.log_weight))
        return shifted / shifted.sum()
