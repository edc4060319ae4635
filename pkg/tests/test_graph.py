import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augpd import Graph, GraphError, incidence_matrix, weighted_laplacian
from augpd.graph import validate_incidence, validate_routing


def random_connected_graph(draw_n, draw_extra, seed):
    """Random spanning tree plus extra directed edges."""
    rng = np.random.default_rng(seed)
    nodes = tuple(f"v{i}" for i in range(draw_n))
    edges = []
    for i in range(1, draw_n):
        j = int(rng.integers(0, i))
        edges.append((nodes[j], nodes[i]) if rng.random() < 0.5 else (nodes[i], nodes[j]))
    for _ in range(draw_extra):
        i, j = rng.choice(draw_n, size=2, replace=False)
        edges.append((nodes[i], nodes[j]))
    return Graph(nodes, tuple(edges))


def test_two_node_incidence_column():
    g = Graph(("nu1", "nu2"), (("nu1", "nu2"),))
    np.testing.assert_array_equal(incidence_matrix(g), [[-1.0], [1.0]])


def test_triangle_incidence(triangle_graph):
    a = incidence_matrix(triangle_graph)
    expected = np.array([[-1, -1, 0], [1, 0, -1], [0, 1, 1]], dtype=float)
    np.testing.assert_array_equal(a, expected)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12), extra=st.integers(0, 8), seed=st.integers(0, 10_000))
def test_ones_vector_annihilates_incidence(n, extra, seed):
    a = incidence_matrix(random_connected_graph(n, extra, seed))
    assert np.all(a.sum(axis=0) == 0.0)
    assert set(np.unique(a)) <= {-1.0, 0.0, 1.0}


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 10), extra=st.integers(0, 6), seed=st.integers(0, 10_000))
def test_incidence_rank_and_laplacian_psd(n, extra, seed):
    g = random_connected_graph(n, extra, seed)
    a = incidence_matrix(g)
    sv = np.linalg.svd(a, compute_uv=False)
    assert np.sum(sv > 1e-10) == n - 1

    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 2.0, size=g.n_edges)
    lap = weighted_laplacian(a, w)
    np.testing.assert_allclose(lap, lap.T, atol=0)
    for _ in range(5):
        x = rng.normal(size=n)
        assert x @ lap @ x >= -1e-12
    np.testing.assert_allclose(lap @ np.ones(n), 0.0, atol=1e-12)


def test_single_edge_laplacian():
    g = Graph(("a", "b"), (("a", "b"),))
    lap = weighted_laplacian(incidence_matrix(g), np.array([1.0]))
    np.testing.assert_array_equal(lap, [[1.0, -1.0], [-1.0, 1.0]])


def test_triangle_unit_laplacian(triangle_graph):
    lap = weighted_laplacian(incidence_matrix(triangle_graph), np.ones(3))
    np.testing.assert_array_equal(lap, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])


def test_zero_weights_give_zero_laplacian(triangle_graph):
    lap = weighted_laplacian(incidence_matrix(triangle_graph), np.zeros(3))
    np.testing.assert_array_equal(lap, np.zeros((3, 3)))


def test_graph_validation_errors():
    with pytest.raises(GraphError):
        Graph(("a", "b"), (("a", "a"),))  # self-loop
    with pytest.raises(GraphError):
        Graph(("a", "b", "c"), (("a", "b"),))  # disconnected
    with pytest.raises(GraphError):
        Graph(("a", "b"), (("a", "z"),))  # unknown endpoint
    with pytest.raises(GraphError):
        Graph(("a", "a"), ())  # duplicate ids
    with pytest.raises(GraphError):
        Graph((), ())


def test_laplacian_validation(triangle_graph):
    a = incidence_matrix(triangle_graph)
    with pytest.raises(GraphError):
        weighted_laplacian(a, np.ones(2))
    with pytest.raises(GraphError):
        weighted_laplacian(a, -np.ones(3))


def test_incidence_override_validation():
    validate_incidence(np.array([[-1.0, 0.5], [1.0, -0.5]]))
    with pytest.raises(GraphError):
        validate_incidence(np.array([[1.0], [1.0]]))  # column sum nonzero
    with pytest.raises(GraphError):
        validate_incidence(np.array([[np.nan], [0.0]]))


def test_routing_validation():
    validate_routing(np.array([[1.0, 0.0], [0.5, 2.0]]))
    with pytest.raises(GraphError):
        validate_routing(np.array([[0.0, 0.0]]))
    with pytest.raises(GraphError):
        validate_routing(np.array([[-1.0, 1.0]]))
