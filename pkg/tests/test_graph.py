import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odeftc.graph import GraphTopology, algebraic_connectivity, laplacian, neighbors


def test_laplacian_examples():
    assert np.array_equal(laplacian(GraphTopology.path(3)), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.array_equal(laplacian(GraphTopology(2, [(0, 1)])), [[1, -1], [-1, 1]])
    assert np.array_equal(laplacian(GraphTopology.complete(3)), [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])


def test_algebraic_connectivity():
    assert algebraic_connectivity(GraphTopology.path(3)) == pytest.approx(1.0)
    assert algebraic_connectivity(GraphTopology.complete(3)) == pytest.approx(3.0)
    assert algebraic_connectivity(GraphTopology(2, [], require_connected=False)) == 0.0


def test_neighbors():
    p = GraphTopology.path(3)
    assert neighbors(p, 1) == {0, 2}
    assert neighbors(p, 0) == {1}
    assert neighbors(GraphTopology.complete(3), 0) == {1, 2}
    with pytest.raises(KeyError):
        neighbors(p, 5)


def test_one_based_edges():
    g = GraphTopology(3, [[1, 2], [2, 3]], one_based=True)
    assert g.edges == ((0, 1), (1, 2))


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 1), (1, 0)], [(0, 3)]])
def test_invalid_edges(edges):
    with pytest.raises(ValueError):
        GraphTopology(3, edges, require_connected=False)


def test_disconnected_rejected_by_default():
    with pytest.raises(ValueError):
        GraphTopology(3, [(0, 1)])


def test_stand_in_graph(ltv):
    assert ltv.graph.ell == 6
    assert ltv.graph.algebraic_connectivity == pytest.approx(2 - np.sqrt(3), abs=1e-12)


@st.composite
def connected_graphs(draw):
    N = draw(st.integers(2, 8))
    perm = draw(st.permutations(range(N)))
    edges = {tuple(sorted((perm[k], perm[k + 1]))) for k in range(N - 1)}
    extra = draw(st.lists(st.tuples(st.integers(0, N - 1), st.integers(0, N - 1)), max_size=10))
    edges |= {tuple(sorted(e)) for e in extra if e[0] != e[1]}
    return GraphTopology(N, sorted(edges))


@settings(max_examples=50, deadline=None)
@given(connected_graphs())
def test_laplacian_properties(g):
    L = g.laplacian
    assert np.array_equal(L, L.T)
    assert np.allclose(L.sum(axis=1), 0)
    assert g.eigenvalues[0] > -1e-12
    assert g.algebraic_connectivity > 0
    assert np.allclose(g.incidence @ g.incidence.T, L)
    for i in range(g.N):
        for j in g.neighbors(i):
            assert i in g.neighbors(j)
