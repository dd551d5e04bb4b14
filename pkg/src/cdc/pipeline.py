"""End-to-end runs, grid search, synthetic data and benchmark drivers."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import subprocess
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import __version__
from .dataset import Dataset, SparseGraph, expand_views, load_dataset, normalize_adjacency
from .embedcluster import FINAL_KMEANS_RESTARTS, cluster, embed
from .graphfilter import filter_all, graph_filter
from .metrics import evaluate
from .numkernel import SplitMix64, kmeans, sample_indices
from .solver import AnchorModel, SolverConfig, fit, gram_eigs

logger = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "RunReport",
    "StageError",
    "run",
    "grid",
    "synth",
    "sbm_graph",
    "grouping_dump",
    "scale_bench",
    "build_id",
    "DEFAULT_GRID",
]

STAGES = ("load", "filter", "fit", "embed", "kmeans")

# search ranges used for the published results; "c" in the anchor list
# stands for the dataset's cluster count
DEFAULT_GRID = {
    "k": [1, 2, 3, 4, 5],
    "alpha": [1e-3, 1.0, 1e1, 1e3, 1e4],
    "beta": [1e-3, 1.0, 1e1, 1e3, 1e4],
    "m": ["c", 10, 30, 50, 70, 100],
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    k: int = 2
    alpha: float = 1.0
    beta: float = 1.0
    anchors: int | None = None  # None -> max(c, 30)
    knn: int = 5
    max_iter: int = 50
    tol: float = 1e-6
    seed: int = 0
    normalize_rows: bool = False
    sylvester_mode: str = "derived_alpha"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"filter order k must be nonnegative, got {self.k}")

    def anchor_count(self, c: int) -> int:
        return max(c, 30) if self.anchors is None else int(self.anchors)

    def solver_config(self, c: int) -> SolverConfig:
        return SolverConfig(
            alpha=self.alpha,
            beta=self.beta,
            m=self.anchor_count(c),
            max_iter=self.max_iter,
            tol=self.tol,
            seed=self.seed,
            sylvester_mode=self.sylvester_mode,
            clusters=c,
        )


@dataclass
class RunReport:
    """Outcome of one pipeline run; serialized as the JSON report."""

    dataset: str
    config: dict
    n: int
    clusters: int
    views: int
    metrics: dict | None
    timings: dict
    iterations: int
    converged: bool
    objective: float
    lambdas: list
    build: str = field(default_factory=lambda: build_id())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False) + "\n"


def build_id() -> str:
    """``cdc-<version>`` plus ``git describe`` output when run from a checkout."""
    ident = f"cdc-{__version__}"
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            ident += "+" + out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return ident


_BUILD_ID = None


def _cached_build_id():
    global _BUILD_ID
    if _BUILD_ID is None:
        _BUILD_ID = build_id()
    return _BUILD_ID


class _Timer:
    def __init__(self):
        self.timings = {s: 0.0 for s in STAGES}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                timer.timings[name] += time.perf_counter() - self.t0
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc

        return _Ctx()


@dataclass(eq=False)
class RunResult:
    report: RunReport
    model: AnchorModel
    labels: np.ndarray
    embedding: np.ndarray
    filtered: list


def run(source, cfg: RunConfig = RunConfig(), *, name: str | None = None, filtered=None,
        t_eigs=None) -> RunResult:
    """Load -> expand -> filter -> fit -> cluster -> metrics.

    ``source`` is a manifest path or an in-memory :class:`Dataset`.
    ``filtered`` / ``t_eigs`` let a caller reuse filtered views and their
    Gram eigendecompositions across runs with the same ``k``.
    """
    timer = _Timer()
    with timer.stage("load"):
        ds = source if isinstance(source, Dataset) else load_dataset(source)
    with timer.stage("filter"):
        if filtered is None:
            filtered = filter_all(expand_views(ds, cfg.knn), cfg.k)
    scfg = cfg.solver_config(ds.c)
    with timer.stage("fit"):
        model = fit(filtered, scfg, t_eigs=t_eigs)
    with timer.stage("embed"):
        E, s = embed(model.Z, ds.c, cfg.normalize_rows, return_singular_values=True)
    with timer.stage("kmeans"):
        labels = kmeans(E, ds.c, seed=cfg.seed, n_init=FINAL_KMEANS_RESTARTS).labels
    metrics = evaluate(labels, ds.labels) if ds.labels is not None else None
    report = RunReport(
        dataset=name or ds.name,
        config=asdict(cfg) | {"anchors": scfg.m},
        n=ds.n,
        clusters=ds.c,
        views=len(filtered),
        metrics=metrics,
        timings=timer.timings,
        iterations=model.iterations,
        converged=model.converged,
        objective=float(model.objective_trace[-1]),
        lambdas=model.lam.tolist(),
        build=_cached_build_id(),
    )
    return RunResult(report, model, labels, E, filtered)


# -- output helpers -------------------------------------------------------


def write_labels(path, labels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(x)}\n" for x in labels), encoding="utf-8")


def write_trace(path, model: AnchorModel):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    V = model.lambda_trace.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"] + [f"lambda_{v + 1}" for v in range(V)])
        for i, (obj, lam) in enumerate(zip(model.objective_trace, model.lambda_trace), start=1):
            w.writerow([i, repr(float(obj))] + [repr(float(x)) for x in lam])


def write_matrix_csv(path, M, header):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.asarray(M):
            w.writerow([repr(float(x)) for x in row])


def write_filtered(directory, filtered):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for fv in filtered:
        scipy.io.mmwrite(str(directory / f"H{fv.view + 1}.mtx"), fv.H, field="real", precision=17)


# -- grid search ----------------------------------------------------------


def _resolve_m(values, c):
    out = []
    for v in values:
        m = c if v == "c" else int(v)
        if m not in out:
            out.append(m)
    return out


def _grid_group(source, base: RunConfig, k, cells):
    """Run every (alpha, beta, m) cell for one filter order, sharing the filtered views."""
    ds = source if isinstance(source, Dataset) else load_dataset(source)
    rows = []
    try:
        filtered = filter_all(expand_views(ds, base.knn), k)
        t_eigs = gram_eigs(filtered)
    except Exception as exc:  # noqa: BLE001 - every cell of this group fails the same way
        return [_failed_row(k, a, b, m, StageError("filter", exc)) for a, b, m in cells]
    for alpha, beta, m in cells:
        cfg = RunConfig(**(asdict(base) | {"k": k, "alpha": alpha, "beta": beta, "anchors": m}))
        try:
            res = run(ds, cfg, filtered=filtered, t_eigs=t_eigs)
        except Exception as exc:  # noqa: BLE001 - failed cells are recorded, not fatal
            rows.append(_failed_row(k, alpha, beta, m, exc))
            continue
        r = res.report
        rows.append({
            "k": k, "alpha": alpha, "beta": beta, "m": m,
            "acc": _m(r.metrics, "acc"), "nmi": _m(r.metrics, "nmi"),
            "ari": _m(r.metrics, "ari"), "f1": _m(r.metrics, "f1"),
            "objective": r.objective, "iterations": r.iterations,
            "converged": r.converged, "seconds": sum(r.timings.values()), "error": "",
        })
    return rows


def _m(metrics, key):
    return None if metrics is None else metrics[key]


def _failed_row(k, alpha, beta, m, exc):
    logger.warning("grid cell k=%s alpha=%s beta=%s m=%s failed: %s", k, alpha, beta, m, exc)
    return {
        "k": k, "alpha": alpha, "beta": beta, "m": m,
        "acc": None, "nmi": None, "ari": None, "f1": None,
        "objective": None, "iterations": None, "converged": None, "seconds": None,
        "error": str(exc),
    }


GRID_COLUMNS = ["k", "alpha", "beta", "m", "acc", "nmi", "ari", "f1",
                "objective", "iterations", "converged", "seconds", "error", "best"]


@dataclass(eq=False)
class GridResult:
    rows: list[dict]
    best_index: int | None
    selected_by: str

    @property
    def best(self) -> dict | None:
        return None if self.best_index is None else self.rows[self.best_index]

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=GRID_COLUMNS)
            w.writeheader()
            for i, row in enumerate(self.rows):
                w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in GRID_COLUMNS}
                           | {"best": int(i == self.best_index)})


def workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("CDC_THREADS", "1")))
    except ValueError:
        return 1


def grid(source, spec: dict | None = None, base: RunConfig = RunConfig(), workers: int | None = None) -> GridResult:
    """Evaluate every combination of ``spec['k'] x alpha x beta x m``.

    Rows come back in enumeration order whatever the worker count.  The
    best cell maximizes ACC when labels exist and minimizes the final
    objective otherwise.
    """
    spec = dict(DEFAULT_GRID if spec is None else spec)
    ds = source if isinstance(source, Dataset) else load_dataset(source)
    ks = [int(k) for k in spec.get("k", [base.k])]
    alphas = [float(a) for a in spec.get("alpha", [base.alpha])]
    betas = [float(b) for b in spec.get("beta", [base.beta])]
    ms = _resolve_m(spec.get("m", [base.anchor_count(ds.c)]), ds.c)
    cells = list(itertools.product(alphas, betas, ms))

    workers = workers_from_env() if workers is None else max(1, workers)
    if workers > 1 and len(ks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_grid_group, [ds] * len(ks), [base] * len(ks), ks, [cells] * len(ks)))
    else:
        groups = [_grid_group(ds, base, k, cells) for k in ks]
    rows = [row for g in groups for row in g]

    labelled = ds.labels is not None
    selected_by = "acc" if labelled else "objective"
    best = None
    for i, row in enumerate(rows):
        if row["error"]:
            continue
        if best is None:
            best = i
        elif labelled and row["acc"] > rows[best]["acc"]:
            best = i
        elif not labelled and row["objective"] < rows[best]["objective"]:
            best = i
    return GridResult(rows, best, selected_by)


# -- synthetic data -------------------------------------------------------


def _block_sizes(n, c):
    base, extra = divmod(n, c)
    return [base + (1 if b < extra else 0) for b in range(c)]


def sbm_graph(sizes, p_in, p_out, rng: np.random.Generator) -> SparseGraph:
    """Undirected SBM without self-loops.

    For every block pair the edge count is drawn from the exact binomial and
    the edges are then placed uniformly without replacement, which gives the
    same distribution as independent Bernoulli trials without an O(n^2) pass.
    """
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rows, cols = [], []
    c = len(sizes)
    for a in range(c):
        for b in range(a, c):
            p = p_in if a == b else p_out
            if p <= 0:
                continue
            na, nb = sizes[a], sizes[b]
            pairs = na * (na - 1) // 2 if a == b else na * nb
            if pairs == 0:
                continue
            count = rng.binomial(pairs, p)
            idx = rng.choice(pairs, size=count, replace=False)
            if a == b:
                # decode linear index of the strict upper triangle
                i = (np.floor((np.sqrt(8.0 * idx + 1) - 1) / 2)).astype(np.int64) + 1
                i = np.where(i * (i - 1) // 2 > idx, i - 1, i)
                i = np.where((i + 1) * i // 2 <= idx, i + 1, i)
                j = idx - i * (i - 1) // 2
                u, v = i, j
            else:
                u, v = idx // nb, idx % nb
            rows.append(offsets[a] + u)
            cols.append(offsets[b] + v)
    n = int(offsets[-1])
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cc = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    return SparseGraph.from_edges(n, np.concatenate([r, cc]), np.concatenate([cc, r]), symmetric=True)


def synth_dataset(n, c, p_in, p_out, d=16, seed=0, mean_scale=1.0, noise=1.0) -> Dataset:
    """SBM graph with ``c`` balanced blocks plus Gaussian features around per-block means."""
    if not (0 <= p_out < p_in <= 1):
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if c < 1 or n < c:
        raise ValueError(f"need 1 <= c <= n, got n={n}, c={c}")
    rng = np.random.default_rng(seed)
    sizes = _block_sizes(n, c)
    labels = np.repeat(np.arange(c), sizes)
    g = sbm_graph(sizes, p_in, p_out, rng)
    means = rng.normal(0.0, mean_scale, size=(c, d))
    X = means[labels] + rng.normal(0.0, noise, size=(n, d))
    return Dataset(n=n, graphs=[g], attributes=[X], c=c, labels=labels, name=f"sbm-n{n}-c{c}")


def synth(out_dir, n=300, c=3, p_in=0.2, p_out=0.01, d=16, seed=0, mean_scale=1.0, noise=1.0) -> Path:
    """Write a synthetic SBM dataset (manifest, graph, features, labels) to ``out_dir``."""
    ds = synth_dataset(n, c, p_in, p_out, d, seed, mean_scale, noise)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = ds.graphs[0]
    upper = g.rows < g.cols
    A = sp.coo_matrix((g.weights[upper], (g.rows[upper], g.cols[upper])), shape=(n, n))
    scipy.io.mmwrite(str(out / "graph.mtx"), A, symmetry="general", field="real", precision=17)
    np.savetxt(out / "features.csv", ds.attributes[0], delimiter=",", fmt="%.17g")
    write_labels(out / "labels.txt", ds.labels)
    manifest = {
        "name": ds.name,
        "n": n,
        "clusters": c,
        "graphs": ["graph.mtx"],
        "attributes": ["features.csv"],
        "labels": "labels.txt",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out / "manifest.json"


# -- diagnostics ----------------------------------------------------------


def grouping_dump(model, labels, per_class: int = 20, seed: int = 0, path=None):
    """Sample ``per_class`` nodes of each class and return their columns of Z.

    Rows are ordered by class and then by node index.  Returns
    ``(node_ids, classes, values, notes)`` with ``values`` of shape
    (sampled nodes, m); when ``path`` is given the same data is written as
    CSV with any notes as leading ``#`` lines.
    """
    Z = getattr(model, "Z", model)
    labels = np.asarray(labels)
    if labels.shape[0] != Z.shape[1]:
        raise ValueError("labels must have one entry per column of Z")
    rng = SplitMix64(seed)
    nodes, classes, notes = [], [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < per_class:
            notes.append(f"class {cls} has {members.size} < {per_class} members; all taken")
            pick = members
        else:
            pick = members[sample_indices(members.size, per_class, rng)]
        nodes.extend(pick.tolist())
        classes.extend([cls] * pick.size)
    nodes = np.asarray(nodes, dtype=np.int64)
    values = Z[:, nodes].T
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for note in notes:
                fh.write(f"# {note}\n")
            w = csv.writer(fh)
            w.writerow(["node", "class"] + [f"z_{i + 1}" for i in range(Z.shape[0])])
            for node, cls, row in zip(nodes, classes, values):
                w.writerow([int(node), int(cls)] + [repr(float(x)) for x in row])
    return nodes, np.asarray(classes), values, notes


def scale_bench(sizes, c=5, deg_in=10.0, deg_out=1.0, d=64, m=50, k=2, alpha=1.0, beta=1.0,
                iterations=10, seed=0, measure_memory=False, path=None) -> list[dict]:
    """Time every stage on SBM datasets of increasing size.

    Block-internal and cross-block expected degrees are held fixed so edge
    count grows linearly with ``n``.  The solver runs exactly
    ``iterations`` sweeps so times are comparable across sizes.  With
    ``measure_memory`` the peak traced allocation of the fit is reported.
    """
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("need at least one size")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly ascending")
    rows = []
    for n in sizes:
        block = n / c
        p_in = min(1.0, deg_in / max(block - 1, 1))
        p_out = min(p_in / 2, deg_out / max(n - block, 1))
        t0 = time.perf_counter()
        ds = synth_dataset(n, c, p_in, p_out, d=d, seed=seed)
        t_synth = time.perf_counter() - t0

        t0 = time.perf_counter()
        A = normalize_adjacency(ds.graphs[0])
        fv = graph_filter(A, ds.attributes[0], k)
        t_filter = time.perf_counter() - t0

        cfg = SolverConfig(alpha=alpha, beta=beta, m=m, max_iter=iterations, tol=1e-300, seed=seed)
        if measure_memory:
            tracemalloc.start()
            tracemalloc.reset_peak()
        t0 = time.perf_counter()
        model = fit([fv], cfg)
        t_fit = time.perf_counter() - t0
        peak = None
        if measure_memory:
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()

        t0 = time.perf_counter()
        result = cluster(model, c, seed=seed)
        t_cluster = time.perf_counter() - t0
        rows.append({
            "n": n,
            "edges": ds.graphs[0].nnz // 2,
            "synth_seconds": t_synth,
            "filter_seconds": t_filter,
            "fit_seconds": t_fit,
            "cluster_seconds": t_cluster,
            "iterations": model.iterations,
            "peak_fit_bytes": peak,
            "linear_bytes": 8 * max(m * n, n * d),
            "acc": evaluate(result.labels, ds.labels)["acc"],
        })
        logger.info("scale-bench n=%d fit %.3fs", n, t_fit)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows
