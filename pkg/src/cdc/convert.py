"""Convert published benchmark files into dataset manifests.

Two source layouts are understood:

* the Planetoid split files ``ind.<name>.{x,tx,allx,y,ty,ally,graph}`` plus
  ``ind.<name>.test.index`` (Cora, Citeseer, Pubmed);
* a MATLAB ``.mat`` file holding one feature matrix, one or more relation
  matrices and a label vector or one-hot matrix (ACM, DBLP, IMDB releases).

The Planetoid files are Python pickles.  Unpickling runs arbitrary code, so
only convert files from a source you trust.
"""

from __future__ import annotations

import json
import pickle
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .dataset import DatasetError

__all__ = ["planetoid_arrays", "convert_planetoid", "mat_arrays", "convert_mat", "write_manifest"]

_PLANETOID_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _unpickle(path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _relation(M, n) -> sp.coo_matrix:
    """Binary symmetric adjacency without self-loops."""
    A = sp.csr_matrix(M, dtype=np.float64)
    if A.shape != (n, n):
        raise DatasetError(f"relation has shape {A.shape}, expected {(n, n)}")
    A = ((A + A.T) != 0).astype(np.float64).tolil()
    A.setdiag(0)
    A = A.tocsr()
    A.eliminate_zeros()
    return A.tocoo()


def planetoid_arrays(directory, name: str):
    """Return ``(adjacency, features, labels)`` for one Planetoid dataset.

    Test rows are put back in node order.  Citeseer lists test indices with
    gaps (isolated nodes outside the split); those nodes get zero features
    and label 0, which keeps the usual 3327-node graph.
    """
    directory = Path(directory)
    parts = {}
    for key in _PLANETOID_PARTS:
        path = directory / f"ind.{name}.{key}"
        if not path.exists():
            raise DatasetError(f"missing file: {path}")
        parts[key] = _unpickle(path)
    index_path = directory / f"ind.{name}.test.index"
    if not index_path.exists():
        raise DatasetError(f"missing file: {index_path}")
    test_idx = np.loadtxt(index_path, dtype=np.int64, ndmin=1)
    test_sorted = np.sort(test_idx)

    tx, ty = _dense(parts["tx"]), _dense(parts["ty"])
    lo, hi = int(test_sorted[0]), int(test_sorted[-1])
    full = hi - lo + 1
    if full > tx.shape[0]:
        tx_ext = np.zeros((full, tx.shape[1]))
        ty_ext = np.zeros((full, ty.shape[1]))
        tx_ext[test_sorted - lo] = tx
        ty_ext[test_sorted - lo] = ty
        tx, ty = tx_ext, ty_ext

    X = np.vstack([_dense(parts["allx"]), tx]).astype(np.float64)
    Y = np.vstack([_dense(parts["ally"]), ty])
    # the test block is stored in the order of sorted indices
    X[test_idx] = X[test_sorted]
    Y[test_idx] = Y[test_sorted]
    n = X.shape[0]

    graph = parts["graph"]
    rows, cols = [], []
    for u, nbrs in graph.items():
        for v in nbrs:
            rows.append(u)
            cols.append(v)
    if rows and max(max(rows), max(cols)) >= n:
        raise DatasetError(f"{name}: graph references node beyond {n} feature rows")
    A = _relation(sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)), n)
    labels = np.argmax(Y, axis=1).astype(np.int64)
    return A, X, labels


def mat_arrays(path, feature_key="feature", relation_keys=("PAP", "PLP"), label_key="label"):
    """Return ``(relations, features, labels)`` from a ``.mat`` file."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    data = scipy.io.loadmat(str(path))
    missing = [k for k in (feature_key, label_key, *relation_keys) if k not in data]
    if missing:
        raise DatasetError(f"{path}: keys {missing} not found (have {sorted(k for k in data if not k.startswith('__'))})")
    X = _dense(data[feature_key]).astype(np.float64)
    n = X.shape[0]
    Y = _dense(data[label_key])
    if Y.ndim == 2 and min(Y.shape) > 1:
        labels = np.argmax(Y, axis=1)
    else:
        labels = Y.ravel()
    labels = np.unique(labels, return_inverse=True)[1].astype(np.int64)
    relations = [_relation(data[k], n) for k in relation_keys]
    return relations, X, labels


def write_manifest(out_dir, name, relations, features, labels) -> Path:
    """Write relations (.mtx), features (.npy) and labels, plus the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(features, np.ndarray):
        features = [features]
    n = features[0].shape[0]
    graph_files, feat_files = [], []
    for i, A in enumerate(relations):
        fname = f"graph{i + 1}.mtx"
        scipy.io.mmwrite(str(out / fname), sp.triu(A, k=1).tocoo(), symmetry="general", field="pattern")
        graph_files.append(fname)
    for i, X in enumerate(features):
        fname = f"features{i + 1}.npy"
        np.save(out / fname, np.asarray(X, dtype=np.float64))
        feat_files.append(fname)
    (out / "labels.txt").write_text("".join(f"{int(v)}\n" for v in labels), encoding="utf-8")
    manifest = {
        "name": name,
        "n": int(n),
        "clusters": int(np.unique(labels).size),
        "graphs": graph_files,
        "attributes": feat_files,
        "labels": "labels.txt",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def convert_planetoid(directory, name: str, out_dir) -> Path:
    A, X, labels = planetoid_arrays(directory, name)
    return write_manifest(out_dir, name, [A], X, labels)


def convert_mat(path, out_dir, name: str | None = None, feature_key="feature",
                relation_keys=("PAP", "PLP"), label_key="label") -> Path:
    relations, X, labels = mat_arrays(path, feature_key, relation_keys, label_key)
    return write_manifest(out_dir, name or Path(path).stem, relations, X, labels)
