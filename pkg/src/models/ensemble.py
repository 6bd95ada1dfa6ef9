from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.models.coefficients import DiffusionSpec, DriftSpec
from src.models.paths import PathBundle, TimeGrid
from src.models.topology import OffspringLaw, SampledTree
from src.schemas.config import GammaEstimatorConfig
from src.schemas.report import GammaDiagnostic


@dataclass
class TreeRun:
    """One simulated tree: its structure and the retained paths"""

    tree: SampledTree
    bundle: PathBundle

    def path(self, label) -> np.ndarray:
        return self.bundle.states[self.bundle.row_of(str(label))]

    def has(self, label) -> bool:
        return label in self.tree


@dataclass(frozen=True)
class HistoryEmbedding:
    """Finite surrogate for a path prefix: the value now and at dyadic fractions of t.

    At step j the picked steps are j, j // 2, ..., j // 2**lags, so the lags
    stretch with the elapsed time and always reach back towards time 0.
    """

    lags: int = 4

    def steps(self, step: int) -> np.ndarray:
        return np.array([step] + [step >> i for i in range(1, self.lags + 1)], dtype=np.int64)

    @property
    def width(self) -> int:
        return 1 + self.lags

    def embed(self, paths: np.ndarray, step: int) -> np.ndarray:
        """paths (m, K+1, d) -> features (m, d * (1 + lags)) using steps <= step"""
        picked = paths[:, self.steps(step), :]
        return picked.reshape(paths.shape[0], -1)

    def embed_pair(self, first: np.ndarray, second: np.ndarray, step: int) -> np.ndarray:
        return np.hstack([self.embed(first, step), self.embed(second, step)])


@dataclass
class LocalEnsemble:
    """M replicas of the root neighborhood (Y_root, Y_1, ..., Y_L).

    ``states`` has shape (M, 1 + L, K+1, d); slot 0 is the root and slot k the
    k-th child. ``degrees[m]`` children are members, the rest stay frozen.
    ``aux`` holds the auxiliary counts C_hat_1 used by the tilted estimator.
    """

    grid: TimeGrid
    states: np.ndarray
    degrees: np.ndarray
    aux: np.ndarray
    drift: DriftSpec
    diffusion: DiffusionSpec
    config: GammaEstimatorConfig
    tilted: bool
    seed: int
    rho: Optional[OffspringLaw] = None
    embedding: HistoryEmbedding = field(default_factory=HistoryEmbedding)
    diagnostics: List[GammaDiagnostic] = field(default_factory=list)

    @property
    def replicas(self) -> int:
        return self.states.shape[0]

    @property
    def slots(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[3]

    def root(self) -> np.ndarray:
        return self.states[:, 0]

    def child(self, k: int) -> np.ndarray:
        return self.states[:, k]

    def member_mask(self) -> np.ndarray:
        """(M, L) indicator of k in T_1"""
        return np.arange(1, self.slots + 1)[None, :] <= self.degrees[:, None]

    def tilt_weights(self) -> np.ndarray:
        """|N_root| / (1 + C_hat_1) on {N_root nonempty}, zero elsewhere"""
        weights = self.degrees / (1.0 + self.aux)
        return np.where(self.degrees > 0, weights, 0.0)

    def marginal(self, slot: int, t: float) -> np.ndarray:
        return self.states[:, slot, self.grid.index_of(t), :]

    def pair(self, t: float, first: int = 0, second: int = 1) -> np.ndarray:
        j = self.grid.index_of(t)
        return np.hstack([self.states[:, first, j, :], self.states[:, second, j, :]])

    def as_bundle(self, replica: int) -> PathBundle:
        names = ["o"] + [str(k) for k in range(1, self.slots + 1)]
        membership = np.concatenate([[True], self.member_mask()[replica]])
        return PathBundle(
            grid=self.grid, states=self.states[replica], membership=membership, names=names
        )
