"""Dataset loading, validation and view expansion.

A dataset is a set of ``N`` samples described by ``V1 >= 0`` relational
graphs and ``V2 >= 1`` attribute matrices.  Before filtering, the data is
expanded into a list of (graph, features) views: every relation is paired
with every attribute matrix for graph data, and each attribute matrix gets
its own kNN graph when no relation is given.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

logger = logging.getLogger(__name__)

__all__ = [
    "DatasetError",
    "SparseGraph",
    "Dataset",
    "ViewSet",
    "load_dataset",
    "build_knn_graph",
    "normalize_adjacency",
    "expand_views",
    "check_features",
    "read_graph",
    "read_features",
    "read_labels",
]


class DatasetError(ValueError):
    """Raised when input data violates a dataset invariant."""


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Weighted graph on ``n`` nodes in canonical coordinate form.

    Entries are sorted by (row, col) with no duplicates.  Use
    :meth:`from_edges` to build one from raw edge lists.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    symmetric: bool

    @classmethod
    def from_edges(cls, n, rows, cols, weights=None, symmetric=None) -> "SparseGraph":
        """Canonicalize an edge list.

        Duplicate (row, col) pairs are merged into a single entry whose weight
        is the sum of the duplicates.  When ``symmetric`` is None it is
        detected from the edge set.
        """
        n = int(n)
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if weights is None:
            weights = np.ones(rows.shape[0])
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == weights.shape):
            raise DatasetError("edge arrays must have equal length")
        if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise DatasetError(f"edge index out of range [0, {n})")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise DatasetError("edge weights must be finite and nonnegative")
        mat = sp.coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return cls._from_csr(mat, symmetric)

    @classmethod
    def from_scipy(cls, mat, symmetric=None) -> "SparseGraph":
        coo = sp.coo_matrix(mat)
        if coo.shape[0] != coo.shape[1]:
            raise DatasetError(f"adjacency must be square, got {coo.shape}")
        return cls.from_edges(coo.shape[0], coo.row, coo.col, coo.data, symmetric)

    @classmethod
    def _from_csr(cls, mat: sp.csr_matrix, symmetric) -> "SparseGraph":
        coo = mat.tocoo()
        if symmetric is None:
            symmetric = _is_symmetric(mat)
        elif symmetric and not _is_symmetric(mat):
            raise DatasetError("graph flagged symmetric but edge set is not closed under transpose")
        return cls(
            n=mat.shape[0],
            rows=coo.row.astype(np.int64),
            cols=coo.col.astype(np.int64),
            weights=coo.data.astype(np.float64),
            symmetric=bool(symmetric),
        )

    @property
    def nnz(self) -> int:
        return int(self.rows.shape[0])

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, (self.rows, self.cols)), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def symmetrized(self) -> "SparseGraph":
        """Union with the transpose; a pair present both ways keeps the larger weight."""
        if self.symmetric:
            return self
        mat = self.to_csr()
        return SparseGraph._from_csr(mat.maximum(mat.T).tocsr(), True)

    def degrees(self) -> np.ndarray:
        """Unweighted out-degree of every node (self-loops excluded)."""
        off = self.rows != self.cols
        return np.bincount(self.rows[off], minlength=self.n)


def _is_symmetric(mat: sp.csr_matrix) -> bool:
    diff = mat - mat.T
    return diff.nnz == 0 or bool(np.all(diff.data == 0))


def check_features(X, name: str = "features") -> np.ndarray:
    """Return ``X`` as a finite 2-D float64 array or raise DatasetError."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise DatasetError(f"{name}: expected a non-empty 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DatasetError(f"{name}: non-finite feature entry")
    return X


@dataclass(eq=False)
class Dataset:
    """Validated multi-view dataset.

    ``labels`` are remapped to ``0..c-1``; the original label value of
    cluster ``i`` is ``label_values[i]``.
    """

    n: int
    graphs: list[SparseGraph]
    attributes: list[np.ndarray]
    c: int
    labels: np.ndarray | None = None
    label_values: np.ndarray | None = None
    name: str = "dataset"

    def __post_init__(self):
        self.attributes = [check_features(X, f"attribute {i}") for i, X in enumerate(self.attributes)]
        if self.n <= 0:
            raise DatasetError("n must be positive")
        if len(self.attributes) < 1:
            raise DatasetError("a dataset needs at least one attribute matrix")
        if self.c < 1:
            raise DatasetError("cluster count must be positive")
        for i, g in enumerate(self.graphs):
            if g.n != self.n:
                raise DatasetError(f"dimension mismatch: graph {i} has {g.n} nodes, expected {self.n}")
        for i, X in enumerate(self.attributes):
            if X.shape[0] != self.n:
                raise DatasetError(
                    f"dimension mismatch: attribute {i} has {X.shape[0]} rows, expected {self.n}"
                )
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.n,):
                raise DatasetError(f"dimension mismatch: {labels.shape[0]} labels, expected {self.n}")
            if self.label_values is None:
                values, labels = np.unique(labels, return_inverse=True)
                self.label_values = values
            if labels.min() < 0 or labels.max() >= self.c:
                raise DatasetError(
                    f"label out of range: {labels.max() + 1} distinct labels but {self.c} clusters"
                )
            self.labels = labels.astype(np.int64)

    @property
    def V1(self) -> int:
        return len(self.graphs)

    @property
    def V2(self) -> int:
        return len(self.attributes)

    @property
    def dims(self) -> list[int]:
        return [X.shape[1] for X in self.attributes]


@dataclass(eq=False)
class ViewSet:
    """Expanded (normalized graph, features) pairs ready for filtering."""

    views: list[tuple[SparseGraph, np.ndarray]] = field(default_factory=list)

    @property
    def V(self) -> int:
        return len(self.views)

    @property
    def n(self) -> int:
        return self.views[0][1].shape[0]


# -- file formats ---------------------------------------------------------


def read_graph(path) -> SparseGraph:
    """Read a Matrix Market coordinate file as a symmetric graph.

    ``general`` matrices are symmetrized by edge-set union.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    mat = scipy.io.mmread(str(path))
    if not sp.issparse(mat):
        mat = sp.coo_matrix(mat)
    g = SparseGraph.from_scipy(mat)
    if not g.symmetric:
        logger.info("%s: general matrix symmetrized by union", path.name)
        g = g.symmetrized()
    return g


def read_features(path) -> np.ndarray:
    """Read dense features from ``.mtx`` (array or coordinate), ``.csv`` or ``.npy``."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".mtx":
        X = scipy.io.mmread(str(path))
        if sp.issparse(X):
            X = X.toarray()
    elif suffix == ".csv":
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    elif suffix == ".npy":
        X = np.load(path)
    else:
        raise DatasetError(f"{path}: unsupported feature format {suffix!r}")
    return check_features(X, path.name)


def read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    raw = np.loadtxt(path, dtype=np.float64, ndmin=1)
    if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
        raise DatasetError(f"{path}: labels must be integers")
    return raw.astype(np.int64)


def load_dataset(manifest_path) -> Dataset:
    """Load and validate a dataset described by a JSON manifest.

    The manifest holds ``n``, ``clusters``, lists of ``graphs`` and
    ``attributes`` paths and an optional ``labels`` path.  Relative paths
    are resolved against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"missing file: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("n", "clusters", "attributes"):
        if key not in manifest:
            raise DatasetError(f"{manifest_path}: manifest lacks {key!r}")
    root = manifest_path.parent

    graphs = [read_graph(root / p) for p in manifest.get("graphs") or []]
    attributes = [read_features(root / p) for p in manifest["attributes"]]
    labels = None
    if manifest.get("labels"):
        labels = read_labels(root / manifest["labels"])
    return Dataset(
        n=int(manifest["n"]),
        graphs=graphs,
        attributes=attributes,
        c=int(manifest["clusters"]),
        labels=labels,
        name=manifest.get("name", manifest_path.parent.name),
    )


# -- graph construction ---------------------------------------------------


def build_knn_graph(X, k_nn: int = 5, chunk_size: int = 1024) -> SparseGraph:
    """Binary kNN graph under Euclidean distance, symmetrized by union.

    The query point itself is never its own neighbour.  Equal distances are
    resolved in favour of the smaller index, so the result only depends on
    the row order of ``X``.
    """
    X = check_features(X)
    n = X.shape[0]
    k_nn = int(k_nn)
    if k_nn < 1:
        raise DatasetError("k_nn must be positive")
    if k_nn >= n:
        raise DatasetError(f"k_nn={k_nn} must be smaller than n={n}")

    sq = np.einsum("ij,ij->i", X, X)
    neighbors = np.empty((n, k_nn), dtype=np.int64)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        D = sq[start:stop, None] - 2.0 * (X[start:stop] @ X.T) + sq[None, :]
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(D, k_nn - 1, axis=1)[:, :k_nn]
        kth = np.take_along_axis(D, part, axis=1).max(axis=1)
        counts = (D <= kth[:, None]).sum(axis=1)
        for i in range(stop - start):
            row = D[i]
            if counts[i] == k_nn:
                idx = np.sort(part[i])
                # order by distance, then index
                idx = idx[np.argsort(row[idx], kind="stable")]
            else:
                cand = np.flatnonzero(row <= kth[i])
                idx = cand[np.argsort(row[cand], kind="stable")][:k_nn]
            neighbors[start + i] = idx

    rows = np.repeat(np.arange(n), k_nn)
    cols = neighbors.ravel()
    mat = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    mat = mat.maximum(mat.T).tocsr()
    mat.sort_indices()
    return SparseGraph._from_csr(mat, True)


def normalize_adjacency(g: SparseGraph) -> SparseGraph:
    """Renormalized adjacency ``D^{-1/2} (A + I) D^{-1/2}``.

    ``D`` is the degree matrix of ``A + I``, so every degree is positive and
    an isolated node ends up with a unit self-loop.
    """
    if not g.symmetric:
        raise DatasetError("normalize_adjacency requires a symmetric graph")
    A = g.to_csr() + sp.identity(g.n, format="csr")
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    Dm = sp.diags(inv_sqrt)
    An = (Dm @ A @ Dm).tocsr()
    # exact symmetry: average away rounding asymmetry
    An = ((An + An.T) * 0.5).tocsr()
    An.sort_indices()
    coo = An.tocoo()
    return SparseGraph(
        n=g.n,
        rows=coo.row.astype(np.int64),
        cols=coo.col.astype(np.int64),
        weights=coo.data.astype(np.float64),
        symmetric=True,
    )


def expand_views(ds: Dataset, k_nn: int = 5) -> ViewSet:
    """Pair relations with attributes and normalize every graph.

    Graph data yields ``V1 * V2`` views ordered relation-major.  Non-graph
    data yields one view per attribute matrix, each with its own kNN graph.
    """
    if ds.V1 >= 1:
        normalized = [normalize_adjacency(g.symmetrized()) for g in ds.graphs]
        views = [(A, X) for A in normalized for X in ds.attributes]
    else:
        views = [(normalize_adjacency(build_knn_graph(X, k_nn)), X) for X in ds.attributes]
    return ViewSet(views)
