import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

import itertools

import numpy as np
import pytest
from scipy import stats

from src.schemas.report import Verdict
from src.services.distances import (
    effective_size,
    slice_directions,
    two_sample_ks,
    wasserstein1,
    weighted_ks,
)
from src.utils.errors import InvalidArgumentError


def test_wasserstein_point_masses():
    """Test W1 between two Dirac masses and of a sample with itself"""
    assert wasserstein1([0.0], [1.0]) == 1.0
    sample = np.random.default_rng(0).normal(size=50)
    assert wasserstein1(sample, sample) == 0.0


def test_wasserstein_matches_assignment():
    """Test one-dimensional W1 against brute-force optimal matching on five points"""
    gen = np.random.default_rng(1)
    a, b = gen.normal(size=5), gen.normal(size=5)
    best = min(
        np.mean(np.abs(a - b[list(perm)])) for perm in itertools.permutations(range(5))
    )
    assert abs(wasserstein1(a, b) - best) < 1e-12


def test_wasserstein_symmetric_and_triangle():
    """Test symmetry and the triangle inequality"""
    gen = np.random.default_rng(2)
    a, b, c = gen.normal(size=40), gen.normal(1, 1, 60), gen.normal(-1, 2, 30)
    assert abs(wasserstein1(a, b) - wasserstein1(b, a)) < 1e-12
    assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-12


def test_weighted_wasserstein():
    """Test that weights move the mass of an empirical law"""
    assert abs(wasserstein1([0.0, 1.0], [0.0], [0.0, 1.0]) - 1.0) < 1e-12
    assert abs(wasserstein1([0.0, 1.0], [0.0], [3.0, 1.0]) - 0.25) < 1e-12


def test_sliced_wasserstein():
    """Test the sliced distance in two dimensions"""
    gen = np.random.default_rng(3)
    a = gen.normal(size=(200, 2))
    assert wasserstein1(a, a) == 0.0
    shifted = wasserstein1(a, a + np.array([1.0, 0.0]))
    # mean |<e1, u>| over unit directions in the plane is 2 / pi
    assert abs(shifted - 2 / np.pi) < 0.1


def test_slice_directions_fixed():
    """Test that projection directions are unit vectors and reproducible"""
    d = slice_directions(3)
    assert d.shape == (64, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    assert d is slice_directions(3)


def test_wasserstein_rejects_bad_samples():
    """Test empty samples and dimension mismatches"""
    with pytest.raises(InvalidArgumentError):
        wasserstein1([], [1.0])
    with pytest.raises(InvalidArgumentError):
        wasserstein1(np.zeros((3, 2)), np.zeros((3, 1)))


def test_ks_identical_samples():
    """Test KS between a sample and itself"""
    sample = np.random.default_rng(4).normal(size=300)
    report = two_sample_ks(sample, sample)
    assert report.statistic == 0.0
    assert report.verdict == Verdict.PASS


def test_ks_detects_shift():
    """Test KS power against a unit shift"""
    gen = np.random.default_rng(5)
    report = two_sample_ks(gen.normal(size=2000), gen.normal(1.0, 1.0, 2000))
    assert report.p_value < 1e-6
    assert report.verdict == Verdict.FAIL


def test_weighted_ks_unit_weights():
    """Test that unit weights reproduce the ordinary KS statistic"""
    gen = np.random.default_rng(6)
    a, b = gen.normal(size=120), gen.normal(0.2, 1.0, 90)
    expected = stats.ks_2samp(a, b).statistic
    assert abs(weighted_ks(a, b).statistic - expected) < 1e-12


def test_weighted_ks_effective_sizes():
    """Test Kish sizes and zero-mass weights"""
    assert effective_size(np.ones(10)) == 10.0
    assert abs(effective_size(np.array([1.0, 0.0, 0.0, 1.0])) - 2.0) < 1e-12
    with pytest.raises(InvalidArgumentError):
        weighted_ks([0.0, 1.0], [0.5], np.zeros(2))
