"""Pydantic schemas for run configuration and reports"""

from src.schemas.config import (
    GammaEstimatorConfig,
    OffspringConfig,
    ModelConfig,
    CoefficientConfig,
    GridConfig,
    EnsembleConfig,
    RunConfig,
)
from src.schemas.report import Verdict, TestReport, GammaDiagnostic, OutputFile, RunManifest

__all__ = [
    "GammaEstimatorConfig",
    "OffspringConfig",
    "ModelConfig",
    "CoefficientConfig",
    "GridConfig",
    "EnsembleConfig",
    "RunConfig",
    "Verdict",
    "TestReport",
    "GammaDiagnostic",
    "OutputFile",
    "RunManifest",
]
