"""Fixed registry of coefficient builders.

Drifts follow the two interaction shapes supported by ``DriftSpec``: pairwise
averages and functions of the neighbors' empirical mean.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from src.models.coefficients import DiffusionSpec, DriftSpec, InitialLaw
from src.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Builder:
    name: str
    kind: str
    factory: Callable
    defaults: Dict[str, float]
    description: str


def _now(x: np.ndarray) -> np.ndarray:
    return x[:, -1, :]


def zero_drift(**_) -> DriftSpec:
    return DriftSpec(
        name="zero",
        empty_case=lambda t, x: np.zeros_like(_now(x)),
        pair=lambda t, x, y: np.zeros_like(_now(x)),
        growth_const=0.0,
        is_zero=True,
    )


def constant_drift(c: float = 1.0, **_) -> DriftSpec:
    return DriftSpec(
        name="constant",
        empty_case=lambda t, x: np.full_like(_now(x), c),
        pair=lambda t, x, y: np.full_like(_now(x), c),
        growth_const=abs(c),
        params={"c": c},
    )


def ou_pairwise_drift(theta: float = 1.0, beta: float = 1.0, **_) -> DriftSpec:
    """b~(x, y) = -theta x + beta y, b~0(x) = -theta x"""
    return DriftSpec(
        name="ou-pairwise",
        empty_case=lambda t, x: -theta * _now(x),
        pair=lambda t, x, y: -theta * _now(x) + beta * _now(y),
        growth_const=abs(theta) + abs(beta),
        params={"theta": theta, "beta": beta},
    )


def sine_pairwise_drift(theta: float = 1.0, beta: float = 1.0, **_) -> DriftSpec:
    """Bounded interaction b~(x, y) = beta sin(y - x), b~0(x) = -theta tanh x"""
    return DriftSpec(
        name="sine-pairwise",
        empty_case=lambda t, x: -theta * np.tanh(_now(x)),
        pair=lambda t, x, y: beta * np.sin(_now(y) - _now(x)),
        growth_const=abs(theta) + abs(beta),
        params={"theta": theta, "beta": beta},
    )


def empirical_mean_drift(theta: float = 1.0, beta: float = 1.0, **_) -> DriftSpec:
    """b(x, mu) = -theta x + beta tanh(mean of mu); A empty gives -theta x"""
    return DriftSpec(
        name="empirical-mean",
        empty_case=lambda t, x: -theta * _now(x),
        feature=lambda y: _now(y),
        outer=lambda t, x, m: -theta * _now(x) + beta * np.tanh(m),
        growth_const=abs(theta) + abs(beta),
        params={"theta": theta, "beta": beta},
    )


def identity_sigma(**_) -> DiffusionSpec:
    return DiffusionSpec(
        name="identity",
        sigma_max=1.0,
        sigma_inv_max=1.0,
        diagonal=lambda t, x: np.ones_like(_now(x)),
    )


def scalar_sigma(s: float = 1.0, **_) -> DiffusionSpec:
    if not s > 0:
        raise InvalidArgumentError("scalar sigma must be positive")
    return DiffusionSpec(
        name="scalar",
        sigma_max=s,
        sigma_inv_max=1.0 / s,
        diagonal=lambda t, x: np.full_like(_now(x), s),
        params={"s": s},
    )


def tanh_diagonal_sigma(a: float = 0.1, s: float = 1.0, **_) -> DiffusionSpec:
    """sigma(x) = diag(s (1 + a tanh x_i))"""
    if not 0 <= a < 1 or not s > 0:
        raise InvalidArgumentError("tanh-diagonal needs 0 <= a < 1 and s > 0")
    return DiffusionSpec(
        name="tanh-diagonal",
        sigma_max=s * (1 + a),
        sigma_inv_max=1.0 / (s * (1 - a)),
        diagonal=lambda t, x: s * (1.0 + a * np.tanh(_now(x))),
        params={"a": a, "s": s},
    )


def point_init(x0: float = 0.0, dim: int = 1, **_) -> InitialLaw:
    return InitialLaw(
        name="point",
        dim=dim,
        draw=lambda gen, d: np.full(d, x0, dtype=float),
        second_moment=dim * x0**2,
        support_radius=abs(x0) * math.sqrt(dim),
        params={"x0": x0},
    )


def gaussian_init(mean: float = 0.0, std: float = 1.0, dim: int = 1, **_) -> InitialLaw:
    if std < 0:
        raise InvalidArgumentError("gaussian std must be non-negative")
    return InitialLaw(
        name="gaussian",
        dim=dim,
        draw=lambda gen, d: mean + std * gen.standard_normal(d),
        second_moment=dim * (mean**2 + std**2),
        params={"mean": mean, "std": std},
    )


def uniform_init(low: float = -1.0, high: float = 1.0, dim: int = 1, **_) -> InitialLaw:
    if not high > low:
        raise InvalidArgumentError("uniform init needs high > low")
    return InitialLaw(
        name="uniform",
        dim=dim,
        draw=lambda gen, d: gen.uniform(low, high, d),
        second_moment=dim * (low**2 + low * high + high**2) / 3.0,
        support_radius=max(abs(low), abs(high)) * math.sqrt(dim),
        params={"low": low, "high": high},
    )


REGISTRY: Dict[str, Builder] = {
    b.name: b
    for b in [
        Builder("zero", "drift", zero_drift, {}, "b = 0"),
        Builder("constant", "drift", constant_drift, {"c": 1.0}, "b = c in every coordinate"),
        Builder(
            "ou-pairwise",
            "drift",
            ou_pairwise_drift,
            {"theta": 1.0, "beta": 1.0},
            "pairwise average of -theta x + beta y",
        ),
        Builder(
            "sine-pairwise",
            "drift",
            sine_pairwise_drift,
            {"theta": 1.0, "beta": 1.0},
            "pairwise average of beta sin(y - x); -theta tanh x when isolated",
        ),
        Builder(
            "empirical-mean",
            "drift",
            empirical_mean_drift,
            {"theta": 1.0, "beta": 1.0},
            "-theta x + beta tanh(neighbor mean)",
        ),
        Builder("identity", "sigma", identity_sigma, {}, "sigma = I"),
        Builder("scalar", "sigma", scalar_sigma, {"s": 1.0}, "sigma = s I"),
        Builder(
            "tanh-diagonal",
            "sigma",
            tanh_diagonal_sigma,
            {"a": 0.1, "s": 1.0},
            "sigma = diag(s (1 + a tanh x))",
        ),
        Builder("point", "init", point_init, {"x0": 0.0}, "X(0) = x0"),
        Builder("gaussian", "init", gaussian_init, {"mean": 0.0, "std": 1.0}, "N(mean, std^2)"),
        Builder("uniform", "init", uniform_init, {"low": -1.0, "high": 1.0}, "U[low, high]"),
    ]
}

# accepted aliases
REGISTRY["identity-sigma"] = REGISTRY["identity"]
REGISTRY["tanh-diagonal-sigma"] = REGISTRY["tanh-diagonal"]


def _build(kind: str, name: str, params: Optional[Dict[str, float]], **extra):
    builder = REGISTRY.get(name)
    if builder is None or builder.kind != kind:
        raise InvalidArgumentError(f"unknown {kind} builder '{name}'")
    params = dict(params or {})
    unknown = set(params) - set(builder.defaults)
    if unknown:
        raise InvalidArgumentError(f"{kind} builder '{name}' has no parameter(s) {sorted(unknown)}")
    merged = {**builder.defaults, **{k: float(v) for k, v in params.items()}}
    return builder.factory(**merged, **extra)


def build_drift(name: str, params: Optional[Dict[str, float]] = None) -> DriftSpec:
    return _build("drift", name, params)


def build_diffusion(name: str, params: Optional[Dict[str, float]] = None) -> DiffusionSpec:
    return _build("sigma", name, params)


def build_init(name: str, params: Optional[Dict[str, float]] = None, dim: int = 1) -> InitialLaw:
    return _build("init", name, params, dim=dim)


def list_builders() -> List[Dict[str, str]]:
    rows = []
    for key, builder in sorted(REGISTRY.items()):
        if key != builder.name:
            continue
        defaults = ", ".join(f"{k}={v:g}" for k, v in builder.defaults.items())
        rows.append(
            {
                "name": builder.name,
                "kind": builder.kind,
                "defaults": defaults,
                "description": builder.description,
            }
        )
    return rows
