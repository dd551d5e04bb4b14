"""Spectral embedding of the anchor graph and final hard clustering."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numkernel import kmeans, svd_wide

logger = logging.getLogger(__name__)

__all__ = ["ClusterResult", "embed", "cluster"]

# k-means restarts on the final embedding; c-dimensional so restarts are cheap
FINAL_KMEANS_RESTARTS = 10


@dataclass(eq=False)
class ClusterResult:
    labels: np.ndarray
    embedding: np.ndarray
    singular_values: np.ndarray


def embed(Z, c: int, normalize_rows: bool = False, return_singular_values: bool = False):
    """Top-``c`` right singular vectors of ``Z`` as an N x c embedding.

    If ``Z`` has rank below ``c`` the missing columns are zero.
    """
    Z = np.asarray(Z, dtype=np.float64)
    m, N = Z.shape
    if not 1 <= c <= m:
        raise ValueError(f"need 1 <= c <= m, got c={c}, m={m}")
    _, s, V = svd_wide(Z, c)
    if V.shape[1] < c:
        logger.warning("embedding: Z has rank %d < c=%d, padding with zero columns", V.shape[1], c)
        V = np.hstack([V, np.zeros((N, c - V.shape[1]))])
        s = np.concatenate([s, np.zeros(c - s.size)])
    if normalize_rows:
        norms = np.linalg.norm(V, axis=1, keepdims=True)
        V = np.divide(V, norms, out=np.zeros_like(V), where=norms > 0)
    if return_singular_values:
        return V, s
    return V


def cluster(model, c: int, seed: int = 0, normalize_rows: bool = False,
            n_init: int = FINAL_KMEANS_RESTARTS) -> ClusterResult:
    """Labels from k-means on the spectral embedding of ``model.Z``.

    ``model`` may be an AnchorModel or a bare anchor graph array.
    """
    Z = getattr(model, "Z", model)
    if not np.all(np.isfinite(Z)):
        raise ValueError("anchor graph has non-finite entries")
    E, s = embed(Z, c, normalize_rows, return_singular_values=True)
    labels = kmeans(E, c, seed=seed, n_init=n_init).labels
    return ClusterResult(labels, E, s)
