from math import comb

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cdc.dataset import Dataset, SparseGraph, expand_views, normalize_adjacency
from cdc.graphfilter import filter_all, graph_filter, propagation_matrix


def random_graph(rng, n, density=0.3):
    W = np.triu(rng.random((n, n)) < density, 1).astype(float)
    return normalize_adjacency(SparseGraph.from_scipy(sp.coo_matrix(W + W.T)))


def half_graph():
    return SparseGraph.from_edges(2, [0, 0, 1, 1], [0, 1, 0, 1], [0.5] * 4)


def test_k_zero_is_identity():
    X = np.random.default_rng(0).standard_normal((5, 3))
    A = random_graph(np.random.default_rng(1), 5)
    np.testing.assert_array_equal(graph_filter(A, X, 0).H, X)


def test_one_step_arithmetic():
    H = graph_filter(half_graph(), np.eye(2), 1).H
    np.testing.assert_allclose(H, [[0.75, 0.25], [0.25, 0.75]])


def test_long_filter_converges_to_smooth_component():
    A = normalize_adjacency(SparseGraph.from_edges(2, [0, 1], [1, 0]))
    X = np.array([[1.0, -2.0], [5.0, 0.5]])
    H = graph_filter(A, X, 60).H
    # limit: projection onto the top eigenvector (1,1)/sqrt(2) of A
    limit = np.tile(X.mean(axis=0), (2, 1))
    np.testing.assert_allclose(H, limit, atol=1e-9)
    assert np.abs(H[0] - H[1]).max() <= 1e-9


def test_matches_dense_power():
    rng = np.random.default_rng(2)
    A = random_graph(rng, 15)
    X = rng.standard_normal((15, 4))
    for k in range(5):
        # dense oracle: (I - L/2)^k with L = I - A
        L = np.eye(15) - A.to_dense()
        P = np.linalg.matrix_power(np.eye(15) - 0.5 * L, k)
        np.testing.assert_allclose(graph_filter(A, X, k).H, P @ X, atol=1e-12)


def test_negative_order_rejected():
    with pytest.raises(ValueError):
        graph_filter(half_graph(), np.eye(2), -1)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        graph_filter(half_graph(), np.eye(3), 1)


def test_filter_all_counts():
    rng = np.random.default_rng(3)
    n = 10
    graphs = []
    for _ in range(2):
        W = np.triu(rng.random((n, n)) < 0.3, 1).astype(float)
        graphs.append(SparseGraph.from_scipy(sp.coo_matrix(W + W.T)))
    ds = Dataset(n=n, graphs=graphs, attributes=[rng.standard_normal((n, 4))], c=2)
    views = filter_all(expand_views(ds), 2)
    assert len(views) == 2
    assert all(v.H.shape == (n, 4) and v.k == 2 for v in views)
    assert [v.view for v in views] == [0, 1]


def test_filter_all_non_graph():
    rng = np.random.default_rng(4)
    ds = Dataset(n=30, graphs=[], attributes=[rng.standard_normal((30, 3)), rng.standard_normal((30, 5))], c=2)
    views = filter_all(expand_views(ds, k_nn=5), 1)
    assert [v.d for v in views] == [3, 5]
    assert not np.allclose(views[0].H, ds.attributes[0])


class TestSimilarityPreservation:
    def test_identical_neighbourhood_and_features(self):
        # nodes 0 and 1 share neighbours {2, 3} and features
        rows = [0, 0, 1, 1, 2, 3, 2, 3, 3, 4]
        cols = [2, 3, 2, 3, 0, 0, 1, 1, 4, 3]
        A = normalize_adjacency(SparseGraph.from_edges(5, rows, cols))
        Ad = A.to_dense()
        np.testing.assert_array_equal(Ad[0, 2:], Ad[1, 2:])
        X = np.random.default_rng(5).standard_normal((5, 3))
        X[1] = X[0]
        for k in range(6):
            H = graph_filter(A, X, k).H
            np.testing.assert_array_equal(H[0], H[1])

    @pytest.mark.parametrize("seed", range(5))
    def test_decomposition_bound(self, seed):
        rng = np.random.default_rng(seed)
        n = 12
        A = random_graph(rng, n)
        Ad = A.to_dense()
        X = rng.standard_normal((n, 3))
        for k in range(1, 5):
            H = graph_filter(A, X, k).H
            # (A + I)^k = I + A Q with Q = sum_t C(k, t+1) A^t
            Q = sum(comb(k, t + 1) * np.linalg.matrix_power(Ad, t) for t in range(k))
            for i in range(n):
                for j in range(i + 1, n):
                    topo = (Ad[i] - Ad[j]) @ Q @ X
                    attr = X[i] - X[j]
                    diff = H[i] - H[j]
                    np.testing.assert_allclose(diff, (topo + attr) / 2**k, atol=1e-12)
                    bound = (np.linalg.norm(topo) + np.linalg.norm(attr)) / 2**k
                    assert np.linalg.norm(diff) <= bound + 1e-12
                    sq_bound = 2.0 / 4**k * (topo @ topo + attr @ attr)
                    assert diff @ diff <= sq_bound + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(0, 6), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linear_in_features(seed, k, a, b):
    rng = np.random.default_rng(seed)
    A = random_graph(rng, 9)
    X1, X2 = rng.standard_normal((9, 3)), rng.standard_normal((9, 3))
    lhs = graph_filter(A, a * X1 + b * X2, k).H
    rhs = a * graph_filter(A, X1, k).H + b * graph_filter(A, X2, k).H
    assert np.abs(lhs - rhs).max() <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_each_step_contracts(seed):
    rng = np.random.default_rng(seed)
    A = random_graph(rng, 10, density=0.4)
    H = rng.standard_normal((10, 2))
    prev = np.linalg.norm(H)
    for k in range(1, 8):
        cur = np.linalg.norm(graph_filter(A, H, k).H)
        assert cur <= prev + 1e-12
        prev = cur


def test_propagation_matrix():
    rng = np.random.default_rng(6)
    A = random_graph(rng, 7)
    X = rng.standard_normal((7, 2))
    np.testing.assert_allclose(propagation_matrix(A, 3) @ X, graph_filter(A, X, 3).H, atol=1e-13)
