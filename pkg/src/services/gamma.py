import logging
import warnings
from typing import Dict, Optional, Tuple

import numpy as np
from sklearn.neighbors import KNeighborsRegressor, RadiusNeighborsRegressor
from sklearn.preprocessing import StandardScaler

from src.schemas.config import GammaEstimatorConfig
from src.utils.errors import InsufficientEnsembleError
from src.utils.parallel import worker_count

logger = logging.getLogger(__name__)

POOLED = ("pooled",)


def degree_bucket(degrees: np.ndarray, buckets: int) -> np.ndarray:
    """Exact degree up to `buckets`, then a single tail bucket"""
    return np.minimum(np.asarray(degrees, dtype=np.int64), buckets + 1)


class GammaEstimator:
    """Cross-replica nonparametric regression of drift responses on embedded histories"""

    def __init__(self, config: GammaEstimatorConfig, stratify_by_degree: bool = False):
        self.config = config
        self.stratify_by_degree = stratify_by_degree
        self.scaler: Optional[StandardScaler] = None
        self._design: Optional[np.ndarray] = None
        self._responses: Optional[np.ndarray] = None
        self._strata: Optional[np.ndarray] = None
        self._models: Dict[tuple, object] = {}
        self._constant: Optional[np.ndarray] = None
        self.ratio = False
        self.k = 0

    @property
    def is_constant(self) -> bool:
        return self._constant is not None

    @property
    def design_size(self) -> int:
        return 0 if self._design is None else self._design.shape[0]

    def fit(
        self,
        features: np.ndarray,
        responses: np.ndarray,
        degrees: Optional[np.ndarray] = None,
        constant: Optional[np.ndarray] = None,
    ) -> "GammaEstimator":
        """Store the design; `constant` short-circuits regressions of a constant drift"""
        size = features.shape[0]
        self.k = self.config.neighbors_for(size)
        if size < self.k:
            raise InsufficientEnsembleError(f"{size} design points for k={self.k}")

        self._constant = None if constant is None else np.asarray(constant, dtype=float)
        self.scaler = StandardScaler().fit(features)
        self._design = self.scaler.transform(features)
        self._responses = responses.reshape(size, -1)
        if self.stratify_by_degree and degrees is not None:
            self._strata = degree_bucket(degrees, self.config.degree_buckets)
        else:
            self._strata = None
        self._models = {}
        return self

    def _model(self, key: tuple):
        if key in self._models:
            return self._models[key]
        if key == POOLED:
            rows = np.arange(self._design.shape[0])
        else:
            rows = np.flatnonzero(self._strata == key[0])
            if rows.size < self.k:
                self._models[key] = None
                return None

        if self.config.method == "knn":
            model = KNeighborsRegressor(n_neighbors=self.k, n_jobs=worker_count())
        else:
            bandwidth = self.config.bandwidth
            model = RadiusNeighborsRegressor(
                radius=4.0 * bandwidth,
                weights=lambda d: np.exp(-0.5 * (d / bandwidth) ** 2),
                n_jobs=worker_count(),
            )
        model.fit(self._design[rows], self._responses[rows])
        self._models[key] = (model, rows.size)
        return self._models[key]

    def _predict_with(self, key: tuple, queries: np.ndarray) -> Tuple[np.ndarray, int]:
        model, size = self._model(key)
        if self.config.method == "knn":
            return model.predict(queries), size
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = model.predict(queries)
        out = np.asarray(out, dtype=float).reshape(queries.shape[0], -1)
        empty = ~np.all(np.isfinite(out), axis=1)
        if empty.any():
            # no design point inside the kernel radius
            knn = KNeighborsRegressor(n_neighbors=self.k).fit(
                self._design if key == POOLED else self._design[self._strata == key[0]],
                self._responses if key == POOLED else self._responses[self._strata == key[0]],
            )
            out[empty] = knn.predict(queries[empty]).reshape(int(empty.sum()), -1)
        return out, size

    def predict(
        self, queries: np.ndarray, degrees: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, np.ndarray, int]:
        """Estimates, stratum size used per query, and number of pooled fallbacks"""
        count = queries.shape[0]
        width = self._responses.shape[1]
        if self._constant is not None:
            out = np.broadcast_to(self._constant, (count, self._constant.size)).copy()
            return out, np.full(count, self._design.shape[0]), 0
        if count == 0:
            return np.zeros((0, width)), np.zeros(0, dtype=np.int64), 0

        scaled = self.scaler.transform(queries)
        out = np.empty((count, width))
        sizes = np.empty(count, dtype=np.int64)
        fallbacks = 0

        if self._strata is None or degrees is None:
            groups = {POOLED: np.arange(count)}
        else:
            buckets = degree_bucket(degrees, self.config.degree_buckets)
            groups = {(int(b),): np.flatnonzero(buckets == b) for b in np.unique(buckets)}

        for key, idx in groups.items():
            use = key
            if key != POOLED and self._model(key) is None:
                fallbacks += idx.size
                use = POOLED
            pred, size = self._predict_with(use, scaled[idx])
            out[idx] = np.asarray(pred).reshape(idx.size, width)
            sizes[idx] = size

        if fallbacks:
            logger.warning(f"{fallbacks} gamma queries fell back to the pooled design")
        return out, sizes, fallbacks


def constant_value(responses: np.ndarray) -> Optional[np.ndarray]:
    """The common row if every response row is identical"""
    if responses.shape[0] and np.all(responses == responses[0]):
        return responses[0].copy()
    return None
