"""Low-pass graph filtering of node features.

The smoothed representation is ``H = (I - L/2)^k X`` with ``L = I - A`` the
Laplacian of the renormalized adjacency.  Since ``I - L/2 = (A + I)/2`` the
filter is applied as ``k`` sparse products and never formed explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import SparseGraph, ViewSet, check_features

__all__ = ["FilteredView", "graph_filter", "filter_all", "propagation_matrix"]


@dataclass(frozen=True, eq=False)
class FilteredView:
    H: np.ndarray
    k: int
    view: int = 0

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[1]


def graph_filter(A: SparseGraph, X, k: int, view: int = 0) -> FilteredView:
    """Apply ``H <- (A + I) H / 2`` ``k`` times starting from ``H = X``.

    ``A`` must already be normalized (see ``normalize_adjacency``).
    """
    k = int(k)
    if k < 0:
        raise ValueError(f"filter order must be nonnegative, got {k}")
    X = check_features(X)
    if A.n != X.shape[0]:
        raise ValueError(f"dimension mismatch: graph has {A.n} nodes, X has {X.shape[0]} rows")
    H = X.copy()
    if k:
        S = A.to_csr()
        for _ in range(k):
            H = 0.5 * (S @ H + H)
    return FilteredView(np.ascontiguousarray(H), k, view)


def filter_all(vs: ViewSet, k: int) -> list[FilteredView]:
    return [graph_filter(A, X, k, view=i) for i, (A, X) in enumerate(vs.views)]


def propagation_matrix(A: SparseGraph, k: int) -> np.ndarray:
    """Dense ``((A + I)/2)^k``.  Only meant for small graphs in tests and diagnostics."""
    P = np.eye(A.n)
    S = 0.5 * (A.to_csr() + sp.identity(A.n, format="csr"))
    for _ in range(int(k)):
        P = np.asarray(S @ P)
    return P
