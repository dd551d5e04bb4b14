"""Dense and sparse linear-algebra kernels used by the solver.

Everything runs in float64.  Randomness (k-means++ seeding) comes from a
SplitMix64 stream so results are reproducible across platforms.
"""

from __future__ import annotations

import logging
import math
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

logger = logging.getLogger(__name__)

__all__ = [
    "NotSPDError",
    "SplitMix64",
    "sample_indices",
    "SymEig",
    "spmm",
    "sym_eig",
    "solve_spd",
    "solve_sylvester_spd",
    "svd_wide",
    "kmeans",
    "KMeansResult",
]

_MASK64 = (1 << 64) - 1


class NotSPDError(np.linalg.LinAlgError):
    pass


class SplitMix64:
    """SplitMix64 pseudo-random stream (Steele, Lea & Flood)."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randrange(self, n: int) -> int:
        # rejection sampling keeps it unbiased
        n = int(n)
        limit = _MASK64 - (_MASK64 % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def spawn(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())


def sample_indices(n: int, size: int, rng: SplitMix64) -> np.ndarray:
    """Sorted uniform subset of ``range(n)`` of the given size (Floyd's algorithm)."""
    if not 0 <= size <= n:
        raise ValueError(f"cannot sample {size} of {n}")
    chosen: set[int] = set()
    for j in range(n - size, n):
        t = rng.randrange(j + 1)
        chosen.add(j if t in chosen else t)
    return np.array(sorted(chosen), dtype=np.int64)


def spmm(g, X) -> np.ndarray:
    """Sparse-dense product ``A @ X`` with ``A`` a SparseGraph or scipy sparse matrix."""
    A = g.to_csr() if hasattr(g, "to_csr") else sp.csr_matrix(g)
    X = np.asarray(X, dtype=np.float64)
    if A.shape[1] != X.shape[0]:
        raise ValueError(f"dimension mismatch: graph has {A.shape[1]} nodes, X has {X.shape[0]} rows")
    return np.asarray(A @ X)


class SymEig(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns


def sym_eig(M) -> SymEig:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("sym_eig: input is not symmetric")
    w, V = np.linalg.eigh(M)
    return SymEig(w[::-1].copy(), V[:, ::-1].copy())


def solve_spd(M, rhs, overwrite_rhs: bool = False) -> np.ndarray:
    """Solve ``M X = rhs`` through a Cholesky factorization (no explicit inverse).

    With ``overwrite_rhs`` a Fortran-ordered float64 ``rhs`` is reused for
    the solution.
    """
    M = np.asarray(M, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"matrix is not positive definite: {exc}") from None
    return scipy.linalg.cho_solve(factor, rhs, overwrite_b=overwrite_rhs)


def solve_sylvester_spd(R, T, coeff: float, C, eig_R: SymEig | None = None, eig_T: SymEig | None = None):
    """Solve ``R B + coeff * B T = C`` for symmetric PSD ``R`` (m x m) and ``T`` (d x d).

    With ``R = U diag(mu) U^T`` and ``T = V diag(nu) V^T`` the solution is
    ``U [ (U^T C V)_ij / (mu_i + coeff * nu_j) ] V^T``.  Precomputed
    eigendecompositions may be passed in to avoid refactoring a fixed
    operand.

    Denominators below 1e-12 are singular.  Where the transformed right-hand
    side also vanishes the entry is set to zero; otherwise 1e-10 is added
    to the denominator and a warning is logged.
    """
    coeff = float(coeff)
    if coeff <= 0:
        raise ValueError("coeff must be positive")
    C = np.asarray(C, dtype=np.float64)
    if eig_R is None:
        eig_R = sym_eig(R)
    if eig_T is None:
        eig_T = sym_eig(T)
    U, mu = eig_R.eigenvectors, eig_R.eigenvalues
    V, nu = eig_T.eigenvectors, eig_T.eigenvalues
    if C.shape != (U.shape[0], V.shape[0]):
        raise ValueError(f"C has shape {C.shape}, expected {(U.shape[0], V.shape[0])}")

    Ct = U.T @ C @ V
    denom = mu[:, None] + coeff * nu[None, :]
    singular = denom < 1e-12
    if singular.any():
        rhs_tol = 1e-12 * max(1.0, float(np.abs(Ct).max(initial=0.0)))
        null_rhs = singular & (np.abs(Ct) <= rhs_tol)
        bad = singular & ~null_rhs
        if bad.any():
            logger.warning("singular Sylvester pencil: %d entries regularized", int(bad.sum()))
        denom = np.where(bad, denom + 1e-10, denom)
        denom = np.where(null_rhs, 1.0, denom)
        Ct = np.where(null_rhs, 0.0, Ct)
    return U @ (Ct / denom) @ V.T


def svd_wide(Z, r: int):
    """Top-``r`` singular triplets of a wide matrix ``Z`` (m x N, m <= N).

    Computed from the eigendecomposition of the small Gram matrix ``Z Z^T``;
    right vectors are ``Z^T U diag(1/s)``.  Singular values below
    ``1e-10 * s_max`` are dropped, so fewer than ``r`` triplets may be
    returned.  Each left vector is signed so its largest-magnitude entry is
    positive.

    Returns ``(U, s, V)`` with shapes (m, r'), (r',), (N, r').
    """
    Z = np.asarray(Z, dtype=np.float64)
    m, N = Z.shape
    r = int(r)
    if not 1 <= r <= m:
        raise ValueError(f"rank request r={r} outside [1, m={m}]")
    if m > N:
        raise ValueError(f"svd_wide expects m <= N, got {Z.shape}")

    w, U = sym_eig(Z @ Z.T)
    s = np.sqrt(np.clip(w, 0.0, None))
    s_max = s[0] if s.size else 0.0
    keep = int(np.sum(s > 1e-10 * s_max)) if s_max > 0 else 0
    if keep < r:
        logger.warning("svd_wide: rank %d below requested %d", keep, r)
    r = min(r, keep)
    U, s = U[:, :r], s[:r]
    V = (Z.T @ U) / s

    # squaring in Z Z^T loses accuracy for small singular values; one
    # Rayleigh-Ritz step restores orthonormal right vectors
    if r and np.abs(V.T @ V - np.eye(r)).max() > 1e-10:
        Q, _ = np.linalg.qr(V)
        U2, s2, Wt = np.linalg.svd(Z @ Q, full_matrices=False)
        U, s, V = U2, s2, Q @ Wt.T

    if r:
        pivot = np.argmax(np.abs(U), axis=0)
        signs = np.sign(U[pivot, np.arange(r)])
        signs[signs == 0] = 1.0
        U, V = U * signs, V * signs
    return U, s, V


class KMeansResult(NamedTuple):
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_trace: np.ndarray  # inertia after each assignment step
    n_iter: int


def _sq_dist(X, sqX, C):
    D = sqX[:, None] - 2.0 * (X @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    np.maximum(D, 0.0, out=D)
    return D


def _kmeanspp(X, sqX, c, rng: SplitMix64):
    """Greedy k-means++ seeding: each step keeps the best of several D^2 draws."""
    n = X.shape[0]
    trials = 2 + int(math.log(c))
    centers = np.empty((c, X.shape[1]))
    first = rng.randrange(n)
    centers[0] = X[first]
    closest = _sq_dist(X, sqX, X[first:first + 1])[:, 0]
    for j in range(1, c):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen center
            idx = np.array([rng.randrange(n) for _ in range(trials)])
        else:
            cum = np.cumsum(closest)
            draws = np.array([rng.random() * total for _ in range(trials)])
            idx = np.minimum(np.searchsorted(cum, draws, side="right"), n - 1)
        cand = np.minimum(closest[:, None], _sq_dist(X, sqX, X[idx]))
        best = int(np.argmin(cand.sum(axis=0)))
        centers[j] = X[idx[best]]
        closest = cand[:, best]
    return centers


def kmeans(X, c: int, seed: int = 0, max_iter: int = 300, n_init: int = 1) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start.

    Iterates until the assignment is a fixpoint or ``max_iter`` is reached.
    A cluster that becomes empty is reseeded with the point farthest from
    its assigned centroid.  With ``n_init > 1`` the run with the lowest
    inertia wins; the seeds of the restarts are drawn from one SplitMix64
    stream, so the output is a function of ``(X, c, seed)`` only.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    c = int(c)
    if not 1 <= c <= n:
        raise ValueError(f"need 1 <= c <= n, got c={c}, n={n}")
    stream = SplitMix64(seed)
    best = None
    for _ in range(max(1, int(n_init))):
        res = _lloyd(X, c, stream.spawn(), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _lloyd(X, c, rng, max_iter):
    n = X.shape[0]
    sqX = np.einsum("ij,ij->i", X, X)
    centroids = _kmeanspp(X, sqX, c, rng)
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        D = _sq_dist(X, sqX, centroids)
        new_labels = np.argmin(D, axis=1)
        dist = D[np.arange(n), new_labels]
        counts = np.bincount(new_labels, minlength=c)
        while np.any(counts == 0):
            j = int(np.flatnonzero(counts == 0)[0])
            # never strip a cluster down to nothing
            p = int(np.argmax(np.where(counts[new_labels] > 1, dist, -np.inf)))
            counts[new_labels[p]] -= 1
            new_labels[p] = j
            counts[j] = 1
            dist[p] = 0.0
        trace.append(float(dist.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = _centroids(X, labels, c)
    centroids = _centroids(X, labels, c)
    inertia = float(np.sum((X - centroids[labels]) ** 2))
    return KMeansResult(labels.astype(np.int64), centroids, inertia, np.asarray(trace), it)


def _centroids(X, labels, c):
    onehot = sp.csr_matrix((np.ones(labels.size), (labels, np.arange(labels.size))), shape=(c, labels.size))
    sums = np.asarray(onehot @ X)
    counts = np.bincount(labels, minlength=c).astype(np.float64)
    return sums / counts[:, None]
