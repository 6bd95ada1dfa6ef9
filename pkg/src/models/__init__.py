"""Data models: topologies, coefficients, paths, ensembles and catalog rows"""

from src.models.topology import UhnLabel, OffspringLaw, FiniteGraph, SampledTree, Frame
from src.models.coefficients import DriftSpec, DiffusionSpec, InitialLaw
from src.models.paths import TimeGrid, PathBundle, PathWeight
from src.models.ensemble import TreeRun, HistoryEmbedding, LocalEnsemble
from src.models.run import RunRecord, ReportRecord, Base

__all__ = [
    "UhnLabel",
    "OffspringLaw",
    "FiniteGraph",
    "SampledTree",
    "Frame",
    "DriftSpec",
    "DiffusionSpec",
    "InitialLaw",
    "TimeGrid",
    "PathBundle",
    "PathWeight",
    "TreeRun",
    "HistoryEmbedding",
    "LocalEnsemble",
    "RunRecord",
    "ReportRecord",
    "Base",
]
