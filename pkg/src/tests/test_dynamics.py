import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

import numpy as np
import pytest
from scipy import stats

from src.models.paths import TimeGrid
from src.models.topology import FiniteGraph
from src.services.builders import (
    constant_drift,
    gaussian_init,
    identity_sigma,
    ou_pairwise_drift,
    point_init,
    sine_pairwise_drift,
    zero_drift,
)
from src.services.dynamics import (
    draw_inputs,
    empirical_measure,
    integrate,
    moment_bound_check,
    simulate_driftless,
    simulate_system,
    simulate_tree_ensemble,
)
from src.services.topology import poisson_law, sample_erdos_renyi, sample_ugw
from src.schemas.report import Verdict
from src.utils.errors import DivergedError, InvalidArgumentError


@pytest.fixture
def grid():
    """Short grid"""
    return TimeGrid(1.0, 10)


@pytest.fixture
def graph():
    """Small sparse random graph"""
    return sample_erdos_renyi(60, 0.05, seed=2)


def test_time_grid(grid):
    """Test grid times and off-grid lookups"""
    assert grid.times[-1] == 1.0
    assert grid.index_of(0.3) == 3
    with pytest.raises(InvalidArgumentError):
        grid.index_of(0.35)
    with pytest.raises(InvalidArgumentError):
        TimeGrid(1.0, 0)


def test_simulation_is_deterministic(graph, grid):
    """Test that the seed fixes every path"""
    a = simulate_system(graph, ou_pairwise_drift(), identity_sigma(), gaussian_init(), grid, 5)
    b = simulate_system(graph, ou_pairwise_drift(), identity_sigma(), gaussian_init(), grid, 5)
    c = simulate_system(graph, ou_pairwise_drift(), identity_sigma(), gaussian_init(), grid, 6)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert a.states.shape == (60, 11, 1)


def test_relabeling_permutes_paths(graph, grid):
    """Test that relabeling vertices permutes the paths"""
    frame = graph.frame()
    perm = np.random.default_rng(0).permutation(frame.n)
    drift = sine_pairwise_drift(theta=0.5, beta=1.0)
    base = simulate_system(frame, drift, identity_sigma(), gaussian_init(), grid, 8)
    moved = simulate_system(frame.relabel(perm), drift, identity_sigma(), gaussian_init(), grid, 8)
    assert np.allclose(moved.states[perm], base.states, rtol=0, atol=1e-10)


def test_driftless_matches_zero_drift(graph, grid):
    """Test that the reference system shares the engine and the noise"""
    a = simulate_driftless(graph, identity_sigma(), gaussian_init(), grid, 3)
    b = simulate_system(graph, zero_drift(), identity_sigma(), gaussian_init(), grid, 3)
    assert np.array_equal(a.states, b.states)


def test_brownian_marginal(grid):
    """Test that isolated driftless vertices end at N(0, T)"""
    isolated = FiniteGraph.from_edges(1000, [])
    bundle = simulate_driftless(isolated, identity_sigma(), point_init(), grid, 21)
    assert stats.kstest(bundle.at(1.0)[:, 0], "norm").pvalue > 1e-3


def test_frozen_vertices_keep_initial_state(grid):
    """Test that non-member frame vertices never move"""
    tree = sample_ugw(poisson_law(2.0, cap=8), depth_cap=3, width_cap=8, seed=1)
    bundle = simulate_system(tree, ou_pairwise_drift(), identity_sigma(), gaussian_init(), grid, 4)
    frozen = np.flatnonzero(~bundle.membership)
    assert frozen.size > 0
    assert np.all(bundle.states[frozen] == bundle.states[frozen, :1])
    members = np.flatnonzero(bundle.membership)
    assert np.any(bundle.states[members, -1] != bundle.states[members, 0])


def test_divergence_is_reported():
    """Test that an exploding state raises with the step index"""
    lone = FiniteGraph.from_edges(1, [])
    with pytest.raises(DivergedError) as info:
        simulate_system(
            lone, constant_drift(c=1e13), identity_sigma(), point_init(), TimeGrid(1.0, 10), 0
        )
    assert info.value.step == 1


def test_growth_checked_integration(graph, grid):
    """Test integration with the per-step linear-growth assertion"""
    frame = graph.frame()
    x0, xi = draw_inputs(frame, gaussian_init(), grid, 7)
    states = integrate(
        frame, ou_pairwise_drift(), identity_sigma(), grid, x0, xi, check_growth=True
    )
    assert np.all(np.isfinite(states))


def test_tree_ensemble_independent_of_batching(grid):
    """Test that batch size and worker count do not change any path"""
    rho = poisson_law(2.0, cap=8)
    args = (rho, 3, 8, ou_pairwise_drift(), identity_sigma(), gaussian_init(), grid, 10, 5)
    a = simulate_tree_ensemble(*args, batch=4, workers=1)
    b = simulate_tree_ensemble(*args, batch=10, workers=3)
    assert len(a) == len(b) == 10
    for left, right in zip(a, b):
        assert left.bundle.names == right.bundle.names
        assert np.array_equal(left.bundle.states, right.bundle.states)


def test_tree_ensemble_keep_depth(grid):
    """Test that bundles only hold labels up to keep_depth"""
    runs = simulate_tree_ensemble(
        poisson_law(2.0, cap=8), 4, 8, zero_drift(), identity_sigma(), point_init(), grid, 5, 1,
        keep_depth=1,
    )
    for run in runs:
        assert all(name == "o" or "." not in name for name in run.bundle.names)
        assert "o" in run.bundle.names


def test_empirical_measure(graph, grid):
    """Test empirical measure shapes"""
    bundle = simulate_system(graph, zero_drift(), identity_sigma(), gaussian_init(), grid, 1)
    assert empirical_measure(bundle, 0.5).shape == (60, 1)
    assert empirical_measure(bundle, 0.5, paths=True).shape == (60, 6, 1)


def test_moment_bound(grid):
    """Test the second-moment check on tree bundles"""
    runs = simulate_tree_ensemble(
        poisson_law(2.0, cap=8), 3, 8, ou_pairwise_drift(), identity_sigma(), gaussian_init(),
        grid, 120, 2,
    )
    report = moment_bound_check([run.bundle for run in runs])
    assert report.verdict == Verdict.PASS
    assert "depth-0" in report.details["per_class"]

    few = moment_bound_check([run.bundle for run in runs[:5]])
    assert few.verdict == Verdict.INCONCLUSIVE
