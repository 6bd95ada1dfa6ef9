import sys
import os

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))

import numpy as np
import pytest

from src.models.topology import FiniteGraph, Frame, OffspringLaw, UhnLabel
from src.services import topology
from src.services.topology import (
    boundary,
    delta_law,
    explicit_law,
    first_generation,
    poisson_law,
    read_graph,
    read_tree,
    regular_tree,
    sample_configuration_model,
    sample_erdos_renyi,
    sample_regular,
    sample_ugw,
    size_biased,
    write_graph,
    write_tree,
)
from src.utils.errors import InvalidArgumentError, InvalidLawError, RetryExhaustedError


@pytest.fixture
def poisson2():
    """Poisson(2) truncated at 16"""
    return poisson_law(2.0, cap=16)


def test_label_text_form():
    """Test that labels print as 'o' or dotted digits and parse back"""
    assert str(UhnLabel.root()) == "o"
    label = UhnLabel((1, 2, 3))
    assert str(label) == "1.2.3"
    assert UhnLabel.parse("1.2.3") == label
    assert UhnLabel.parse("o").is_root
    assert label.parent() == UhnLabel((1, 2))
    assert UhnLabel.root().child(4) == UhnLabel((4,))


def test_label_breadth_first_order():
    """Test that sorting labels gives breadth-first order"""
    labels = [UhnLabel((2, 1)), UhnLabel((1,)), UhnLabel(()), UhnLabel((2,)), UhnLabel((1, 3))]
    assert [str(v) for v in sorted(labels)] == ["o", "1", "2", "1.3", "2.1"]


def test_label_rejects_zero_digit():
    """Test that digits must be positive"""
    with pytest.raises(InvalidArgumentError):
        UhnLabel((1, 0))


def test_offspring_law_validation():
    """Test that malformed pmfs are rejected"""
    with pytest.raises(InvalidLawError):
        OffspringLaw(pmf=np.array([0.5, 0.6]), truncation_cap=4)
    with pytest.raises(InvalidLawError):
        OffspringLaw(pmf=np.array([-0.1, 1.1]), truncation_cap=4)
    with pytest.raises(InvalidLawError):
        OffspringLaw(pmf=np.array([0.5, 0.25, 0.25]), truncation_cap=1)


def test_size_biased_delta_is_delta():
    """Test that size-biasing delta_k gives delta_{k-1} exactly"""
    for k in range(2, 6):
        hat = size_biased(delta_law(k))
        assert hat.is_delta() == k - 1
        assert hat.prob(k - 1) == 1.0


def test_size_biased_poisson_termwise(poisson2):
    """Test size-biased masses against (k+1) rho(k+1) / mean"""
    hat = size_biased(poisson2)
    mean = poisson2.mean
    for k in range(hat.pmf.size):
        expected = (k + 1) * poisson2.prob(k + 1) / mean
        assert abs(hat.prob(k) - expected) < 1e-10


def test_size_biased_needs_mass_above_zero():
    """Test that delta_0 has no size-biased law"""
    with pytest.raises(InvalidLawError):
        size_biased(delta_law(0))


def test_explicit_law_renormalizes():
    """Test that a pmf missing mass is renormalized and the gap recorded"""
    law = explicit_law([0.5, 0.3, 0.18])
    assert abs(law.pmf.sum() - 1.0) < 1e-12
    assert abs(law.truncation_bias - 0.02) < 1e-12
    assert abs(law.prob(0) - 0.5 / 0.98) < 1e-12


def test_poisson_truncation_reported():
    """Test that a tight cap reports the removed tail mass"""
    law = poisson_law(4.0, cap=6)
    assert law.truncation_bias > 0
    assert law.pmf.size <= 7


def test_regular_tree_shape():
    """Test the kappa-regular tree identification"""
    tree = regular_tree(3, depth_cap=3)
    assert tree.count(UhnLabel.root()) == 3
    assert tree.count(UhnLabel((2,))) == 2
    assert tree.count(UhnLabel((2, 1, 1))) == 0
    assert len(tree) == 1 + 3 + 6 + 12
    tree.validate()


def test_ugw_of_delta_is_regular_tree():
    """Test that UGW(delta_kappa) is the kappa-regular tree"""
    sampled = sample_ugw(delta_law(3), depth_cap=3, width_cap=3, seed=11)
    assert sampled.offspring_counts == regular_tree(3, depth_cap=3).offspring_counts


def test_ugw_sample_is_deterministic(poisson2):
    """Test that (seed, replica) fixes the sampled tree"""
    a = sample_ugw(poisson2, depth_cap=4, width_cap=16, seed=3, replica=7)
    b = sample_ugw(poisson2, depth_cap=4, width_cap=16, seed=3, replica=7)
    assert a.offspring_counts == b.offspring_counts
    a.validate()


def test_ugw_respects_caps(poisson2):
    """Test depth and width caps"""
    tree = sample_ugw(poisson2, depth_cap=3, width_cap=2, seed=5)
    assert tree.height() <= 3
    assert all(tree.count(v) <= 2 for v in tree.members)
    assert all(tree.count(v) == 0 for v in tree.members if v.depth == 3)


def test_tree_neighbors():
    """Test parent and children as neighbors"""
    tree = regular_tree(2, depth_cap=2)
    assert tree.neighbors(UhnLabel.root()) == [UhnLabel((1,)), UhnLabel((2,))]
    assert tree.neighbors(UhnLabel((1,))) == [UhnLabel.root(), UhnLabel((1, 1))]
    assert tree.neighbors(UhnLabel((3,))) == []


def test_tree_frame_adds_first_absent_children():
    """Test that the frame carries one frozen child per member below the caps"""
    tree = regular_tree(2, depth_cap=2)
    frame = tree.frame()
    assert frame.n == 7
    assert int(frame.membership.sum()) == 5
    frozen = [name for name, member in zip(frame.names, frame.membership) if not member]
    assert frozen == ["1.2", "2.2"]
    assert frame.labels == sorted(frame.labels)


def test_tree_to_graph():
    """Test the index-based copy of a tree"""
    graph, labels = regular_tree(3, depth_cap=2).to_graph()
    assert graph.n == len(labels) == 10
    assert graph.edge_count == 9
    assert labels[0].is_root


def test_first_generation(poisson2):
    """Test shapes and determinism of the (degree, auxiliary count) draws"""
    degrees, aux = first_generation(poisson2, 500, width_cap=16, seed=9)
    again, aux_again = first_generation(poisson2, 500, width_cap=16, seed=9)
    assert degrees.shape == aux.shape == (500,)
    assert np.array_equal(degrees, again) and np.array_equal(aux, aux_again)
    assert abs(degrees.mean() - 2.0) < 0.3


def test_regular_graph_degrees():
    """Test that the sampled graph is simple and kappa-regular"""
    graph = sample_regular(30, 3, seed=4)
    assert np.all(graph.degrees() == 3)
    assert graph.edge_count == 45


def test_regular_graph_parity():
    """Test that odd n * kappa is rejected"""
    with pytest.raises(InvalidArgumentError):
        sample_regular(5, 3, seed=1)
    with pytest.raises(InvalidArgumentError):
        sample_regular(3, 4, seed=1)


def test_regular_graph_by_stub_redraw(monkeypatch):
    """Test the re-draw fallback on its own: simple, kappa-regular and seeded"""
    monkeypatch.setattr(topology, "FULL_PAIRING_ATTEMPTS", 0)
    graph = sample_regular(30, 3, seed=4)
    assert np.all(graph.degrees() == 3)
    assert graph.edge_count == 45
    assert sorted(graph.edges()) == sorted(sample_regular(30, 3, seed=4).edges())


def test_stub_redraw_rounds_are_capped(monkeypatch):
    """Test that a re-draw which cannot finish in its rounds gives up"""
    gen = np.random.default_rng(0)
    assert topology._stub_redraw(np.repeat(np.arange(10), 3), gen, max_rounds=0) is None

    monkeypatch.setattr(topology, "FULL_PAIRING_ATTEMPTS", 0)
    with pytest.raises(RetryExhaustedError):
        sample_regular(40, 8, seed=2, max_attempts=5, max_rounds=1)


def test_erdos_renyi_seeded():
    """Test that G(n, p) is a function of the seed"""
    a = sample_erdos_renyi(200, 0.02, seed=1)
    b = sample_erdos_renyi(200, 0.02, seed=1)
    assert a == b
    assert a.n == 200


def test_configuration_model_erases():
    """Test that the erased configuration model never exceeds the requested degrees"""
    degrees = [3, 3, 2, 2, 1, 1, 4, 2]
    graph = sample_configuration_model(len(degrees), degrees, seed=2)
    assert np.all(graph.degrees() <= np.array(degrees))
    with pytest.raises(InvalidArgumentError):
        sample_configuration_model(3, [1, 1, 1], seed=2)


def test_boundary_orders():
    """Test first and second boundaries on a path"""
    path = FiniteGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    assert boundary({2}, path) == {1, 3}
    assert boundary({2}, path, order=2) == {0, 1, 3, 4}
    tree = regular_tree(2, depth_cap=2)
    assert boundary({UhnLabel((1,))}, tree) == {UhnLabel.root(), UhnLabel((1, 1))}


def test_tree_and_graph_files(tmp_path, poisson2):
    """Test the line-oriented tree and graph formats"""
    tree = sample_ugw(poisson2, depth_cap=3, width_cap=16, seed=1)
    write_tree(tree, tmp_path / "tree.txt")
    assert read_tree(tmp_path / "tree.txt").offspring_counts == tree.offspring_counts
    assert (tmp_path / "tree.txt").read_text().splitlines()[1].startswith("o\t")

    graph = sample_erdos_renyi(50, 0.1, seed=3)
    write_graph(graph, tmp_path / "graph.txt")
    assert read_graph(tmp_path / "graph.txt") == graph


def test_disjoint_union_offsets():
    """Test that the union shifts neighbor indices by the part offsets"""
    a = regular_tree(2, depth_cap=1).frame(with_absent=False)
    b = FiniteGraph.from_edges(2, [(0, 1)]).frame()
    union, offsets = Frame.disjoint_union([a, b])
    assert list(offsets) == [0, 3, 5]
    assert list(union.neighbors(3)) == [4]
    assert list(union.neighbors(0)) == [1, 2]
