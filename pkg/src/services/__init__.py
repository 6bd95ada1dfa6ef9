"""Simulation, local-equation and verification services"""

from src.services.dynamics import simulate_system, simulate_tree_ensemble
from src.services.gamma import GammaEstimator
from src.services.local_equation import solve_local_regular, solve_local_ugw
from src.services.experiments import GraphModel
from src.services.pipeline import parse_config, run

__all__ = [
    "simulate_system",
    "simulate_tree_ensemble",
    "GammaEstimator",
    "solve_local_regular",
    "solve_local_ugw",
    "GraphModel",
    "parse_config",
    "run",
]
