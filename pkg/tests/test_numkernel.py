import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cdc.dataset import SparseGraph
from cdc.numkernel import (
    NotSPDError,
    SplitMix64,
    kmeans,
    sample_indices,
    solve_spd,
    solve_sylvester_spd,
    spmm,
    svd_wide,
    sym_eig,
)


def random_spsd(rng, n, rank=None):
    rank = n if rank is None else rank
    G = rng.standard_normal((n, rank))
    return G @ G.T


class TestSplitMix64:
    def test_reference_stream(self):
        # first outputs for seed 0 of the reference C implementation
        rng = SplitMix64(0)
        assert [rng.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF,
            0x6E789E6AA1B965F4,
            0x06C45D188009454F,
        ]

    def test_random_in_unit_interval(self):
        rng = SplitMix64(123)
        xs = [rng.random() for _ in range(1000)]
        assert min(xs) >= 0.0 and max(xs) < 1.0

    def test_randrange_bounds(self):
        rng = SplitMix64(5)
        assert {rng.randrange(3) for _ in range(200)} == {0, 1, 2}

    def test_sample_indices(self):
        idx = sample_indices(100, 10, SplitMix64(1))
        assert idx.size == 10 and np.unique(idx).size == 10
        assert np.all(np.diff(idx) > 0) and idx.max() < 100
        assert np.array_equal(idx, sample_indices(100, 10, SplitMix64(1)))


class TestSpmm:
    def test_identity_graph(self):
        g = SparseGraph.from_edges(3, [0, 1, 2], [0, 1, 2])
        X = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(spmm(g, X), X)

    def test_half_matrix(self):
        A = sp.csr_matrix([[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_array_equal(spmm(A, np.eye(2)), [[0.5, 0.5], [0.5, 0.5]])

    def test_against_dense_product(self):
        rng = np.random.default_rng(0)
        A = sp.random(50, 50, density=0.1, random_state=1, format="csr")
        X = rng.standard_normal((50, 7))
        assert np.abs(spmm(A, X) - A.toarray() @ X).max() <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            spmm(sp.identity(3), np.ones((4, 2)))


class TestSymEig:
    def test_diagonal(self):
        w, V = sym_eig(np.diag([1.0, 3.0]))
        np.testing.assert_allclose(w, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(V), [[0, 1], [1, 0]], atol=1e-15)

    def test_swap(self):
        w, _ = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(w, [1.0, -1.0], atol=1e-15)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(2)
        G = rng.standard_normal((20, 20))
        M = G + G.T
        w, V = sym_eig(M)
        assert np.all(np.diff(w) <= 0)
        assert np.linalg.norm(M - V @ np.diag(w) @ V.T) <= 1e-9 * np.linalg.norm(M)
        assert np.abs(V.T @ V - np.eye(20)).max() <= 1e-10

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestSolveSPD:
    def test_identity(self):
        rhs = np.arange(6.0).reshape(3, 2)
        np.testing.assert_allclose(solve_spd(np.eye(3), rhs), rhs)

    def test_diagonal(self):
        np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), [[2.0], [4.0]]), [[1.0], [1.0]])

    def test_random_residual(self):
        rng = np.random.default_rng(3)
        M = random_spsd(rng, 30) + 0.1 * np.eye(30)
        rhs = rng.standard_normal((30, 4))
        X = solve_spd(M, rhs)
        assert np.linalg.norm(M @ X - rhs) <= 1e-8 * np.linalg.norm(rhs)

    def test_not_spd(self):
        with pytest.raises(NotSPDError):
            solve_spd(np.diag([1.0, -1.0]), np.ones((2, 1)))


class TestSylvester:
    def test_scalar_pencil(self):
        C = np.arange(6.0).reshape(2, 3)
        B = solve_sylvester_spd(np.eye(2), np.eye(3), 0.5, C)
        np.testing.assert_allclose(B, C / 1.5)

    def test_diagonal_example(self):
        B = solve_sylvester_spd(np.diag([1.0, 2.0]), np.diag([3.0]), 1.0, [[4.0], [5.0]])
        np.testing.assert_allclose(B, [[1.0], [1.0]])

    def test_random_residual(self):
        rng = np.random.default_rng(4)
        R, T = random_spsd(rng, 8), random_spsd(rng, 6)
        C = rng.standard_normal((8, 6))
        B = solve_sylvester_spd(R, T, 0.7, C)
        assert np.linalg.norm(R @ B + 0.7 * B @ T - C) <= 1e-8 * max(1.0, np.linalg.norm(C))

    def test_matches_bartels_stewart(self):
        rng = np.random.default_rng(5)
        R, T = random_spsd(rng, 5) + np.eye(5), random_spsd(rng, 4)
        C = rng.standard_normal((5, 4))
        expected = scipy.linalg.solve_sylvester(R, 2.0 * T, C)
        np.testing.assert_allclose(solve_sylvester_spd(R, T, 2.0, C), expected, atol=1e-10)

    def test_null_directions_with_zero_rhs(self):
        # R and T both singular along e_2; C has no component there
        R = np.diag([1.0, 0.0])
        T = np.diag([2.0, 0.0])
        C = np.array([[3.0, 1.0], [2.0, 0.0]])
        B = solve_sylvester_spd(R, T, 1.0, C)
        assert np.all(np.isfinite(B))
        np.testing.assert_allclose(R @ B + B @ T, C, atol=1e-12)

    def test_singular_pencil_regularized(self, caplog):
        B = solve_sylvester_spd(np.zeros((1, 1)), np.zeros((1, 1)), 1.0, [[1.0]])
        assert np.isfinite(B).all()
        assert "regularized" in caplog.text

    @settings(max_examples=100, deadline=None)
    @given(
        m=st.integers(1, 8),
        d=st.integers(1, 8),
        rank_r=st.integers(1, 8),
        rank_t=st.integers(1, 8),
        coeff=st.floats(1e-3, 1e3),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_residual_property(self, m, d, rank_r, rank_t, coeff, seed):
        rng = np.random.default_rng(seed)
        R = random_spsd(rng, m, min(rank_r, m)) + 1e-3 * np.eye(m)
        T = random_spsd(rng, d, min(rank_t, d))
        C = rng.standard_normal((m, d))
        B = solve_sylvester_spd(R, T, coeff, C)
        res = np.linalg.norm(R @ B + coeff * B @ T - C)
        assert res <= 1e-7 * max(1.0, np.linalg.norm(C))


class TestSvdWide:
    def test_small_example(self):
        U, s, V = svd_wide(np.array([[2.0, 0, 0], [0, 1.0, 0]]), 2)
        np.testing.assert_allclose(s, [2.0, 1.0])
        np.testing.assert_allclose(np.abs(V), [[1, 0], [0, 1], [0, 0]], atol=1e-15)

    def test_rank_deficient(self, caplog):
        Z = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        U, s, V = svd_wide(Z, 2)
        assert s.size == 1 and V.shape == (3, 1)
        assert "rank 1" in caplog.text

    def test_random_reconstruction(self):
        rng = np.random.default_rng(6)
        Z = rng.standard_normal((10, 200))
        U, s, V = svd_wide(Z, 10)
        assert np.linalg.norm(Z - U @ np.diag(s) @ V.T) <= 1e-8 * np.linalg.norm(Z)
        assert np.abs(V.T @ V - np.eye(10)).max() <= 1e-8
        assert np.all(np.diff(s) <= 0) and s.min() >= 0

    def test_ill_conditioned_orthonormality(self):
        rng = np.random.default_rng(7)
        Q1, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        Q2, _ = np.linalg.qr(rng.standard_normal((300, 6)))
        Z = Q1 @ np.diag([1.0, 1e-2, 1e-4, 1e-6, 1e-7, 1e-8]) @ Q2.T
        _, s, V = svd_wide(Z, 6)
        assert np.abs(V.T @ V - np.eye(V.shape[1])).max() <= 1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_svd(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = int(rng.integers(2, 20))
        N = int(rng.integers(m, 50))
        Z = rng.standard_normal((m, N))
        r = int(rng.integers(1, m + 1))
        _, s, V = svd_wide(Z, r)
        _, s_ref, Vt = np.linalg.svd(Z, full_matrices=False)
        np.testing.assert_allclose(s, s_ref[:r], atol=1e-10)
        for j in range(r):
            ref = Vt[j]
            sign = np.sign(ref @ V[:, j])
            np.testing.assert_allclose(V[:, j] * sign, ref, atol=1e-6)


def brute_inertia(X, labels, centroids):
    return sum(float(np.sum((X[i] - centroids[labels[i]]) ** 2)) for i in range(len(X)))


class TestKMeans:
    def test_two_clouds(self):
        rng = np.random.default_rng(8)
        X = np.vstack([rng.normal(0, 0.5, (30, 2)), rng.normal(10, 0.5, (30, 2))])
        for seed in range(5):
            labels = kmeans(X, 2, seed=seed).labels
            assert len(set(labels[:30])) == 1 and len(set(labels[30:])) == 1
            assert labels[0] != labels[-1]

    def test_n_equals_c(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 5.0], [3.0, 3.0]])
        res = kmeans(X, 4, seed=1)
        assert sorted(res.labels.tolist()) == [0, 1, 2, 3]
        assert res.inertia == 0.0

    def test_deterministic(self):
        X = np.random.default_rng(9).standard_normal((200, 3))
        a, b = kmeans(X, 5, seed=42), kmeans(X, 5, seed=42)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.centroids, b.centroids)

    def test_inertia_matches_brute_force(self):
        X = np.random.default_rng(10).standard_normal((60, 4))
        res = kmeans(X, 4, seed=3)
        assert res.inertia == pytest.approx(brute_inertia(X, res.labels, res.centroids), rel=1e-12)

    def test_fixpoint(self):
        X = np.random.default_rng(11).standard_normal((100, 2))
        res = kmeans(X, 3, seed=0)
        d = ((X[:, None, :] - res.centroids[None]) ** 2).sum(-1)
        assert np.array_equal(np.argmin(d, axis=1), res.labels)

    def test_duplicate_points_fill_all_clusters(self):
        X = np.vstack([np.zeros((5, 2)), np.ones((5, 2))])
        res = kmeans(X, 4, seed=0)
        assert np.bincount(res.labels, minlength=4).min() >= 1

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(5, 80), c=st.integers(1, 5))
    def test_inertia_non_increasing(self, seed, n, c):
        X = np.random.default_rng(seed).standard_normal((n, 3))
        trace = kmeans(X, min(c, n), seed=seed).inertia_trace
        assert np.all(np.diff(trace) <= 1e-9 * max(1.0, trace[0]))

    def test_too_many_clusters(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), 4)
