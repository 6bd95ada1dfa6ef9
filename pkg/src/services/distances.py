import logging
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import stats
from scipy.stats import qmc

from src.schemas.report import TestReport
from src.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

SLICES = 64
SLICE_SEED = 20_240_611


def _as_matrix(sample) -> np.ndarray:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None]
    if sample.ndim != 2 or sample.shape[0] == 0:
        raise InvalidArgumentError("samples must be non-empty (n,) or (n, d) arrays")
    return sample


@lru_cache(maxsize=16)
def slice_directions(dim: int, count: int = SLICES) -> np.ndarray:
    """Fixed unit projections from a scrambled Sobol set pushed through the normal quantile"""
    points = qmc.Sobol(d=dim, scramble=True, seed=SLICE_SEED).random(count)
    gauss = stats.norm.ppf(np.clip(points, 1e-12, 1 - 1e-12))
    directions = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    directions.setflags(write=False)
    return directions


def wasserstein1(
    sample_a,
    sample_b,
    weights_a: Optional[np.ndarray] = None,
    weights_b: Optional[np.ndarray] = None,
) -> float:
    """W1 between empirical laws: exact in d=1, sliced over fixed projections for d>1"""
    a, b = _as_matrix(sample_a), _as_matrix(sample_b)
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] == 1:
        return float(stats.wasserstein_distance(a[:, 0], b[:, 0], weights_a, weights_b))
    directions = slice_directions(a.shape[1])
    pa, pb = a @ directions.T, b @ directions.T
    total = sum(
        stats.wasserstein_distance(pa[:, i], pb[:, i], weights_a, weights_b)
        for i in range(directions.shape[0])
    )
    return float(total / directions.shape[0])


def _as_vector(sample) -> np.ndarray:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim == 2 and sample.shape[1] == 1:
        sample = sample[:, 0]
    if sample.ndim != 1:
        raise InvalidArgumentError("KS tests take one-dimensional samples")
    if sample.size == 0:
        raise InvalidArgumentError("KS tests need non-empty samples")
    return sample


def two_sample_ks(sample_a, sample_b, alpha: float = 0.01, name: str = "two-sample-ks"):
    """Kolmogorov-Smirnov statistic with its asymptotic p-value"""
    a, b = _as_vector(sample_a), _as_vector(sample_b)
    result = stats.ks_2samp(a, b, method="asymp")
    return TestReport.against_p_value(
        name,
        float(result.statistic),
        float(result.pvalue),
        alpha,
        sizes={"a": int(a.size), "b": int(b.size)},
    )


def effective_size(weights: np.ndarray) -> float:
    """Kish effective sample size"""
    weights = np.asarray(weights, dtype=float)
    return float(weights.sum() ** 2 / np.sum(weights**2))


def _weighted_cdf(values, weights, grid):
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    cum /= cum[-1]
    idx = np.searchsorted(values[order], grid, side="right")
    return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)


def weighted_ks(
    sample_a,
    sample_b,
    weights_a=None,
    weights_b=None,
    alpha: float = 0.01,
    name: str = "weighted-ks",
):
    """KS statistic between weighted empirical laws, p-value from Kish effective sizes"""
    a, b = _as_vector(sample_a), _as_vector(sample_b)
    wa = np.ones(a.size) if weights_a is None else np.asarray(weights_a, dtype=float)
    wb = np.ones(b.size) if weights_b is None else np.asarray(weights_b, dtype=float)
    if wa.sum() <= 0 or wb.sum() <= 0:
        raise InvalidArgumentError("weights must have positive total mass")
    grid = np.concatenate([a, b])
    statistic = float(np.max(np.abs(_weighted_cdf(a, wa, grid) - _weighted_cdf(b, wb, grid))))
    na, nb = effective_size(wa), effective_size(wb)
    p_value = float(stats.kstwobign.sf(statistic * np.sqrt(na * nb / (na + nb))))
    return TestReport.against_p_value(
        name,
        statistic,
        p_value,
        alpha,
        sizes={"a": int(a.size), "b": int(b.size)},
        details={"effective_a": na, "effective_b": nb},
    )
