"""Scalable anchor-graph clustering for graph and non-graph multi-view data.

Pipeline: normalize each relation graph, smooth every attribute matrix with
a low-pass graph filter, learn a consensus anchor graph with per-view
anchors and weights, then cluster its right singular vectors.
"""

__version__ = "0.1.0"

from .dataset import (  # noqa: E402
    Dataset,
    DatasetError,
    SparseGraph,
    ViewSet,
    build_knn_graph,
    expand_views,
    load_dataset,
    normalize_adjacency,
)
from .embedcluster import ClusterResult, cluster, embed  # noqa: E402
from .graphfilter import FilteredView, filter_all, graph_filter  # noqa: E402
from .metrics import accuracy, ari, evaluate, f1, nmi  # noqa: E402
from .solver import AnchorModel, SolverConfig, fit  # noqa: E402

__all__ = [
    "Dataset",
    "DatasetError",
    "SparseGraph",
    "ViewSet",
    "build_knn_graph",
    "expand_views",
    "load_dataset",
    "normalize_adjacency",
    "FilteredView",
    "graph_filter",
    "filter_all",
    "SolverConfig",
    "AnchorModel",
    "fit",
    "ClusterResult",
    "embed",
    "cluster",
    "accuracy",
    "nmi",
    "ari",
    "f1",
    "evaluate",
]
