import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import minimum_spanning_tree

from gridshift.graph import (
    CommGraph,
    GeoLocation,
    GraphError,
    algebraic_connectivity,
    build_chain_from_locations,
    connected_components,
    is_connected,
    laplacian_spectrum,
    subgraph,
)

# region layouts in km (DG ids are zero-based within a region)
R1 = [(0.0, 0.0), (0.638, 0.0), (0.172, 0.536), (-0.254, 0.819)]
R2 = [(0.0, 0.0), (0.55, 0.0), (0.537, 0.48)]
R3 = [(0.0, 0.0), (0.446, 0.0), (0.839, 0.419), (0.221, 0.426), (0.733, 0.814)]


def _locs(xy):
    return [GeoLocation(x, y) for x, y in xy]


def path(n):
    return CommGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def test_laplacian_rows_sum_to_zero_and_symmetric():
    g = CommGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 2)])
    L = g.laplacian
    assert np.allclose(L.sum(axis=1), 0.0)
    assert np.array_equal(L, L.T)
    assert np.array_equal(np.diag(L), g.degrees)


def test_edges_normalised_and_deduplicated():
    g = CommGraph.from_edges(3, [(1, 0), (0, 1), (2, 1)])
    assert g.edges == ((0, 1), (1, 2))


def test_adjacency_roundtrip():
    g = CommGraph.from_edges(5, [(0, 3), (1, 2), (3, 4), (2, 4)])
    assert CommGraph.from_adjacency(g.adjacency) == g


@pytest.mark.parametrize(
    "adj",
    [
        np.array([[0, 1], [0, 0]]),
        np.array([[1, 1], [1, 0]]),
        np.array([[0, 2], [2, 0]]),
        np.zeros((2, 3)),
    ],
)
def test_from_adjacency_rejects_malformed(adj):
    with pytest.raises(GraphError):
        CommGraph.from_adjacency(adj)


def test_rejects_self_loop_and_out_of_range():
    with pytest.raises(GraphError):
        CommGraph.from_edges(3, [(1, 1)])
    with pytest.raises(GraphError):
        CommGraph.from_edges(3, [(0, 3)])


def test_matrix_views_are_read_only():
    g = path(3)
    with pytest.raises(ValueError):
        g.laplacian[0, 0] = 5.0


def test_path_connectivity_closed_form():
    for n in range(2, 9):
        assert algebraic_connectivity(path(n)) == pytest.approx(2 * (1 - math.cos(math.pi / n)), abs=1e-12)


def test_complete_graph_connectivity_is_n():
    n = 6
    g = CommGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
    assert algebraic_connectivity(g) == pytest.approx(n, rel=1e-12)


def test_disconnected_graph_has_zero_connectivity():
    g = CommGraph.from_edges(4, [(0, 1), (2, 3)])
    assert algebraic_connectivity(g) == 0.0
    assert not is_connected(g)


def test_single_node_and_empty_graph():
    assert algebraic_connectivity(CommGraph(1, ())) == 0.0
    with pytest.raises(GraphError):
        algebraic_connectivity(CommGraph(0, ()))
    assert connected_components(CommGraph(0, ())) == []


def test_block_diagonal_three_regions():
    blocks = [build_chain_from_locations(_locs(xy)) for xy in (R1, R2, R3)]
    n = sum(b.n for b in blocks)
    a = np.zeros((n, n))
    off = 0
    for b in blocks:
        a[off:off + b.n, off:off + b.n] = b.adjacency
        off += b.n
    parts = connected_components(CommGraph.from_adjacency(a))
    assert [len(p) for p in parts] == [4, 3, 5]
    assert parts[1] == [4, 5, 6]


def test_region_layout_trees():
    assert build_chain_from_locations(_locs(R1)).edges == ((0, 1), (0, 2), (2, 3))
    assert build_chain_from_locations(_locs(R2)).edges == ((0, 1), (1, 2))
    assert build_chain_from_locations(_locs(R3)).edges == ((0, 1), (0, 3), (1, 2), (2, 4))


def test_listed_region_three_adjacency_is_disconnected():
    # the tabulated links 8-9, 8-11, 9-11, 10-12 leave {10, 12} isolated
    g = CommGraph.from_edges(5, [(0, 1), (0, 3), (1, 3), (2, 4)])
    assert connected_components(g) == [[0, 1, 3], [2, 4]]


def test_chain_needs_two_distinct_nodes():
    with pytest.raises(GraphError):
        build_chain_from_locations(_locs([(0, 0)]))
    with pytest.raises(GraphError):
        build_chain_from_locations(_locs([(0, 0), (1, 1), (0, 0)]))


def test_chain_tie_break_prefers_lower_index():
    # nodes 1 and 2 are equidistant from node 0
    g = build_chain_from_locations(_locs([(0, 0), (1, 0), (-1, 0)]))
    assert g.edges == ((0, 1), (0, 2))


def test_non_finite_location_rejected():
    with pytest.raises(GraphError):
        GeoLocation(float("nan"), 0.0)


def test_subgraph_relabels():
    g = CommGraph.from_edges(5, [(0, 1), (1, 2), (3, 4), (2, 4)])
    s = subgraph(g, [4, 2, 1])
    assert s.n == 3
    assert s.edges == ((0, 1), (1, 2))


def test_neighbours_and_incident_edges():
    g = CommGraph.from_edges(4, [(0, 1), (1, 2), (1, 3)])
    assert sorted(g.neighbours(1)) == [0, 2, 3]
    assert g.incident_edges(1) == [0, 1, 2]
    assert g.incident_edges(0) == [0]


points = st.lists(
    st.tuples(st.integers(-500, 500), st.integers(-500, 500)),
    min_size=2,
    max_size=12,
    unique=True,
)


@settings(max_examples=80, deadline=None)
@given(points)
def test_chain_is_a_minimum_spanning_tree(xy):
    locs = [GeoLocation(x / 100, y / 100) for x, y in xy]
    g = build_chain_from_locations(locs)
    assert len(g.edges) == len(locs) - 1
    assert is_connected(g)
    assert algebraic_connectivity(g) > 0
    weight = sum(locs[i].distance(locs[j]) for i, j in g.edges)
    n = len(locs)
    dist = np.array([[locs[i].distance(locs[j]) for j in range(n)] for i in range(n)])
    assert weight == pytest.approx(minimum_spanning_tree(dist).sum(), rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 9), st.data())
def test_spectrum_properties(n, data):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    g = CommGraph.from_edges(n, chosen)
    eigs = laplacian_spectrum(g)
    assert eigs[0] == pytest.approx(0.0, abs=1e-9)
    assert np.all(eigs >= -1e-9)
    assert eigs.sum() == pytest.approx(2 * len(g.edges), abs=1e-9)
    k = len(connected_components(g))
    assert int(np.sum(eigs < 1e-9)) == k
    assert (algebraic_connectivity(g) > 0) == (k == 1)
