import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

import numpy as np
import pytest

from src.models.paths import TimeGrid
from src.models.topology import OffspringLaw
from src.schemas.config import GammaEstimatorConfig
from src.schemas.report import Verdict
from src.services.builders import (
    gaussian_init,
    identity_sigma,
    ou_pairwise_drift,
    point_init,
    uniform_init,
    zero_drift,
)
from src.services.dynamics import simulate_tree_ensemble
from src.services.experiments import GraphModel, local_limit_experiment, tree_vs_local_check
from src.services.local_equation import solve_local_regular
from src.services.topology import delta_law
from src.utils.errors import InvalidArgumentError, InvalidComparisonError


@pytest.fixture
def grid():
    """Short grid"""
    return TimeGrid(0.5, 5)


@pytest.fixture
def regular_ensemble(grid):
    """Driftless local ensemble on the 3-regular tree"""
    return solve_local_regular(
        3, zero_drift(), identity_sigma(), uniform_init(), 200, grid, GammaEstimatorConfig(), 1
    )


def test_graph_model_validation():
    """Test required parameters per family"""
    with pytest.raises(InvalidArgumentError):
        GraphModel("er", 100)
    with pytest.raises(InvalidArgumentError):
        GraphModel("regular", 100)
    with pytest.raises(InvalidArgumentError):
        GraphModel("cm", 100)
    with pytest.raises(InvalidArgumentError):
        GraphModel("lattice", 100, kappa=4)


def test_graph_model_sampling():
    """Test sizes and degrees of sampled graphs"""
    assert GraphModel("er", 200, mean_degree=2.0).sample(1).n == 200
    regular = GraphModel("regular", 40, kappa=3)
    assert np.all(regular.with_size(60).sample(2).degrees() == 3)
    cm = GraphModel("cm", 6, degrees=[1, 2, 3, 1, 2, 1])
    assert cm.sample(3).n == 6
    assert cm.with_size(50).sample(3).n == 50


def test_graph_model_local_structure():
    """Test the limiting tree of each family"""
    assert GraphModel("regular", 10, kappa=4).local_structure() == 4
    law = GraphModel("er", 10, mean_degree=2.5).local_structure()
    assert isinstance(law, OffspringLaw)
    assert abs(law.mean - 2.5) < 1e-9
    cm = GraphModel("cm", 4, degrees=[1, 1, 2, 2]).local_structure()
    assert cm.prob(1) == cm.prob(2) == 0.5


def test_local_limit_rejects_mismatched_drift(grid, regular_ensemble):
    """Test that the finite system must share the local solution's drift"""
    with pytest.raises(InvalidComparisonError):
        local_limit_experiment(
            GraphModel("regular", 50, kappa=3),
            ou_pairwise_drift(),
            identity_sigma(),
            uniform_init(),
            grid,
            regular_ensemble,
        )


def test_local_limit_rejects_unbounded_init(grid, regular_ensemble):
    """Test that the initial law needs bounded support"""
    with pytest.raises(InvalidComparisonError):
        local_limit_experiment(
            GraphModel("regular", 50, kappa=3),
            zero_drift(),
            identity_sigma(),
            gaussian_init(),
            grid,
            regular_ensemble,
        )


def test_local_limit_rejects_wrong_tree(grid, regular_ensemble):
    """Test that er graphs are not compared with a regular-tree solution"""
    with pytest.raises(InvalidComparisonError):
        local_limit_experiment(
            GraphModel("er", 50, mean_degree=3.0),
            zero_drift(),
            identity_sigma(),
            uniform_init(),
            grid,
            regular_ensemble,
        )


def test_local_limit_small_run(grid, regular_ensemble):
    """Test a two-trial experiment on small regular graphs"""
    report = local_limit_experiment(
        GraphModel("regular", 50, kappa=3),
        zero_drift(),
        identity_sigma(),
        uniform_init(),
        grid,
        regular_ensemble,
        sizes=(50, 100),
        times=[0.2, 0.5],
        trials=2,
        seed=4,
        tol=1.0,
        require_decrease=False,
        workers=1,
    )
    assert report.name == "local-limit"
    assert report.verdict == Verdict.PASS
    assert report.sizes["n0"] == 50 and report.sizes["n1"] == 100
    assert len(report.details["mean_w1"]["100"]) == 2
    assert report.p_value is not None


def test_tree_vs_local(grid, regular_ensemble):
    """Test the deep-tree law against the local ensemble"""
    runs = simulate_tree_ensemble(
        delta_law(3), 3, 3, zero_drift(), identity_sigma(), uniform_init(), grid, 200, 2
    )
    joint = tree_vs_local_check(runs, regular_ensemble, 0.5, tol=0.5)
    assert joint.name == "tree-vs-local"
    assert joint.verdict == Verdict.PASS
    assert joint.sizes["tree_sample"] == 200
    marginal = tree_vs_local_check(runs, regular_ensemble, 0.5, joint=False, tol=0.5)
    assert marginal.details["joint"] is False
    assert marginal.verdict == Verdict.PASS


def test_tree_vs_local_without_first_child(grid, regular_ensemble):
    """Test that trees with childless roots give an inconclusive joint comparison"""
    runs = simulate_tree_ensemble(
        delta_law(0), 2, 2, zero_drift(), identity_sigma(), point_init(), grid, 5, 3
    )
    report = tree_vs_local_check(runs, regular_ensemble, 0.5)
    assert report.verdict == Verdict.INCONCLUSIVE


def test_tree_vs_local_grid_mismatch(regular_ensemble):
    """Test that the two sides must share the grid"""
    runs = simulate_tree_ensemble(
        delta_law(3), 2, 3, zero_drift(), identity_sigma(), uniform_init(), TimeGrid(1.0, 5), 3, 0
    )
    with pytest.raises(InvalidComparisonError):
        tree_vs_local_check(runs, regular_ensemble, 0.5)
