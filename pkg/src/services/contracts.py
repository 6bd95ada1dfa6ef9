"""Runtime checks of the drift and diffusion contracts.

The checks draw random path windows from a CHECK stream and verify neighbor
permutation symmetry, non-anticipation, linear growth and the sigma bounds.
"""

import logging

import numpy as np

from src.models.coefficients import DiffusionSpec, DriftSpec
from src.utils import rng
from src.utils.errors import ContractViolationError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
GROWTH_SLACK = 1e-9


def sup_norm(states: np.ndarray, step: int) -> np.ndarray:
    """||x||_{*,t_step} for every row"""
    return np.max(np.linalg.norm(states[:, : step + 1, :], axis=2), axis=1)


def assert_linear_growth(drift: DriftSpec, step: int, states, rows, indptr, indices, values):
    """max_i |b_i| <= C_T (1 + ||x||_* + mean_v ||x_v||_*) for every evaluated row"""
    norms = sup_norm(states, step)
    own = norms[rows]
    degrees = np.diff(indptr)
    neighbor_mean = np.zeros(len(rows))
    full = degrees > 0
    if full.any():
        sums = np.add.reduceat(norms[indices], (indptr[:-1] - indptr[0])[full])
        neighbor_mean[full] = sums / degrees[full]
    bound = drift.growth_const * (1.0 + own + neighbor_mean) + GROWTH_SLACK
    size = np.max(np.abs(values), axis=1)
    bad = np.flatnonzero(size > bound)
    if bad.size:
        raise ContractViolationError(
            f"drift {drift.name} exceeds its linear-growth bound at step {step} "
            f"(|b|={size[bad[0]]:.6g} > {bound[bad[0]]:.6g})"
        )


def _random_case(gen: np.random.Generator, degree: int, steps: int, dim: int):
    states = gen.standard_normal((1 + degree, steps + 1, dim)).cumsum(axis=1) * 0.5
    rows = np.array([0])
    indptr = np.array([0, degree])
    indices = np.arange(1, degree + 1)
    return states, rows, indptr, indices


def check_drift_contract(
    drift: DriftSpec,
    dim: int = 1,
    seed: int = 0,
    trials: int = 20,
    max_degree: int = 5,
    steps: int = 8,
) -> None:
    """Randomized symmetry, non-anticipation and growth checks; raises on violation"""
    gen = rng.stream(seed, rng.CHECK, 0)
    for trial in range(trials):
        degree = int(gen.integers(0, max_degree + 1))
        states, rows, indptr, indices = _random_case(gen, degree, steps, dim)
        j = int(gen.integers(0, steps))
        t = float(j) / steps
        base = drift.evaluate(j, t, states, rows, indptr, indices)

        if degree > 1:
            shuffled = gen.permutation(indices)
            permuted = drift.evaluate(j, t, states, rows, indptr, shuffled)
            if not np.allclose(base, permuted, rtol=SYMMETRY_TOL, atol=SYMMETRY_TOL):
                raise ContractViolationError(
                    f"drift {drift.name} is not symmetric in its neighbors (trial {trial})"
                )

        future = states.copy()
        future[:, j + 1 :, :] += gen.standard_normal(future[:, j + 1 :, :].shape) * 10.0
        if not np.array_equal(base, drift.evaluate(j, t, future, rows, indptr, indices)):
            raise ContractViolationError(
                f"drift {drift.name} reads values after step {j} (trial {trial})"
            )

        assert_linear_growth(drift, j, states, rows, indptr, indices, base)
    logger.debug(f"Drift {drift.name} passed {trials} contract trials")


def check_diffusion_contract(
    diffusion: DiffusionSpec, dim: int = 1, seed: int = 0, trials: int = 20, steps: int = 8
) -> None:
    """Operator-norm bounds on sigma and sigma^{-1}; raises on violation"""
    gen = rng.stream(seed, rng.CHECK, 1)
    for trial in range(trials):
        states = gen.standard_normal((4, steps + 1, dim)).cumsum(axis=1) * 2.0
        j = int(gen.integers(0, steps + 1))
        sigma = diffusion.evaluate(j, float(j) / steps, states, np.arange(4))
        norms = np.linalg.norm(sigma, ord=2, axis=(1, 2))
        if np.any(norms > diffusion.sigma_max * (1 + 1e-12)):
            raise ContractViolationError(
                f"sigma {diffusion.name} norm {norms.max():.6g} exceeds {diffusion.sigma_max}"
            )
        smallest = np.linalg.svd(sigma, compute_uv=False)[:, -1]
        if np.any(smallest <= 0) or np.any(1.0 / smallest > diffusion.sigma_inv_max * (1 + 1e-12)):
            raise ContractViolationError(
                f"sigma {diffusion.name} inverse exceeds {diffusion.sigma_inv_max} (trial {trial})"
            )
