from pydantic import BaseModel, Field, ConfigDict, field_validator, model_validator
from typing import Optional, List, Dict, Literal
import math


class GammaEstimatorConfig(BaseModel):
    """Settings of the cross-replica regression estimating gamma_t"""

    method: Literal["knn", "nw"] = Field("knn", description="kNN or Nadaraya-Watson kernel")
    k: Optional[int] = Field(None, ge=1, description="Neighbors; defaults to ceil(sqrt(M))")
    bandwidth: float = Field(0.25, gt=0, description="Gaussian bandwidth in standardized units")
    denominator_floor: float = Field(1e-8, gt=0, description="Lower clamp of the ratio denominator")
    stratify_by_degree: Optional[bool] = Field(None, description="Defaults to on for UGW")
    degree_buckets: int = Field(8, ge=1, description="Exact degrees up to this, then one tail")
    lags: int = Field(4, ge=0, description="Dyadic fractions of t in the history embedding")
    pairwise_decomposition: bool = Field(
        False, description="Regress only the cross term of a pairwise drift on regular trees"
    )

    model_config = ConfigDict(extra="forbid")

    def neighbors_for(self, size: int) -> int:
        return self.k if self.k is not None else max(1, math.ceil(math.sqrt(size)))


class OffspringConfig(BaseModel):
    """Offspring law rho"""

    law: Literal["poisson", "delta", "explicit"] = "poisson"
    theta: float = Field(2.0, gt=0)
    k: int = Field(3, ge=0)
    pmf: Optional[List[float]] = None
    cap: int = Field(64, ge=1)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _explicit_needs_pmf(self):
        if self.law == "explicit" and not self.pmf:
            raise ValueError("explicit law requires rho.pmf")
        return self


class ModelConfig(BaseModel):
    """Topology of the run"""

    name: Literal["er", "regular", "cm", "ugw", "regular-tree"] = "ugw"
    n: int = Field(100, ge=1)
    p: Optional[float] = Field(None, gt=0, lt=1)
    kappa: int = Field(3, ge=1)
    degrees: Optional[List[int]] = None
    degree_file: Optional[str] = None
    depth_cap: int = Field(6, ge=1)
    width_cap: int = Field(16, ge=1)
    rho: OffspringConfig = Field(default_factory=OffspringConfig)

    model_config = ConfigDict(extra="forbid")

    @field_validator("degrees")
    @classmethod
    def _non_negative(cls, value):
        if value is not None and any(d < 0 for d in value):
            raise ValueError("degrees must be non-negative")
        return value


class CoefficientConfig(BaseModel):
    """Named coefficient builders and their parameters"""

    drift: str = "zero"
    sigma: str = "identity"
    init: str = "point"
    dim: int = Field(1, ge=1)
    drift_params: Dict[str, float] = Field(default_factory=dict)
    sigma_params: Dict[str, float] = Field(default_factory=dict)
    init_params: Dict[str, float] = Field(default_factory=dict)

    model_config = ConfigDict(extra="forbid")


class GridConfig(BaseModel):
    """Time grid"""

    T: float = Field(1.0, gt=0)
    K: int = Field(100, ge=1)

    model_config = ConfigDict(extra="forbid")


class EnsembleConfig(BaseModel):
    """Monte Carlo sizes"""

    M: int = Field(1000, ge=1, description="Local-equation replicas")
    trees: int = Field(200, ge=1, description="Independent tree simulations")
    keep_depth: int = Field(2, ge=0)
    trials: int = Field(20, ge=1)

    model_config = ConfigDict(extra="forbid")


class RunConfig(BaseModel):
    """Fully resolved run configuration"""

    kind: Literal["simulate-graph", "simulate-tree", "solve-local", "verify"]
    check: Optional[str] = None
    seed: int = Field(..., ge=0, lt=2**64)
    out: str = "out"
    model: ModelConfig = Field(default_factory=ModelConfig)
    coefficients: CoefficientConfig = Field(default_factory=CoefficientConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    estimator: GammaEstimatorConfig = Field(default_factory=GammaEstimatorConfig)
    check_params: Dict[str, str] = Field(default_factory=dict)
    contracts: bool = Field(False, description="Check drift and sigma contracts at runtime")
    warnings: List[str] = Field(default_factory=list)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _verify_needs_check(self):
        if self.kind == "verify" and not self.check:
            raise ValueError("verify runs require a check name")
        return self
