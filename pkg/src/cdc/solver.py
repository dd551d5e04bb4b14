"""Alternating minimization of the multi-view anchor-graph objective.

For filtered views ``H^v`` (N x d_v) the solver minimizes

    sum_v lam_v^2 (||H^v' - B^v' Z||^2 + alpha ||B^v H^v' - Z||^2) + beta ||Z||^2

over the consensus anchor graph ``Z`` (m x N), per-view anchors ``B^v``
(m x d_v) and view weights ``lam`` on the open simplex.  Each block has a
closed-form minimizer, so a sweep Z -> B -> lam never increases the
objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graphfilter import FilteredView
from .numkernel import SplitMix64, SymEig, kmeans, sample_indices, solve_spd, solve_sylvester_spd, sym_eig

logger = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "AnchorModel",
    "SolverError",
    "init_anchors",
    "update_Z",
    "update_B",
    "update_lambda",
    "view_losses",
    "objective",
    "fit",
    "gram_eigs",
]

SYLVESTER_MODES = ("derived_alpha", "paper_beta")
INIT_SAMPLE_LIMIT = 2000
# columns per block when forming m x N products; temporaries stay a small
# fraction of Z itself
COLUMN_BLOCK = 8192


def _blocks(n):
    step = min(COLUMN_BLOCK, max(256, n // 16))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


class SolverError(RuntimeError):
    """Raised when an iterate stops being finite."""


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 1.0
    beta: float = 1.0
    m: int = 30
    max_iter: int = 50
    tol: float = 1e-6
    seed: int = 0
    sylvester_mode: str = "derived_alpha"
    clusters: int | None = None
    init_sample: int = INIT_SAMPLE_LIMIT

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.m < 1:
            raise ValueError(f"anchor count must be positive, got {self.m}")
        if self.clusters is not None and self.m < self.clusters:
            raise ValueError(f"anchor count m={self.m} is below cluster count c={self.clusters}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.sylvester_mode not in SYLVESTER_MODES:
            raise ValueError(f"sylvester_mode must be one of {SYLVESTER_MODES}")

    @property
    def sylvester_coeff(self) -> float:
        return self.alpha if self.sylvester_mode == "derived_alpha" else self.beta


@dataclass(eq=False)
class AnchorModel:
    Z: np.ndarray
    B: list[np.ndarray]
    lam: np.ndarray
    objective_trace: np.ndarray
    lambda_trace: np.ndarray  # (iterations, V)
    iterations: int
    converged: bool
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def n(self) -> int:
        return self.Z.shape[1]


def _as_arrays(H):
    return [h.H if isinstance(h, FilteredView) else np.asarray(h, dtype=np.float64) for h in H]


def init_anchors(H, m: int, seed: int = 0, sample_limit: int = INIT_SAMPLE_LIMIT) -> list[np.ndarray]:
    """Initial anchors: the ``m`` k-means centroids of each view.

    Views with more than ``sample_limit`` rows are clustered on a uniform
    row sample of that size.
    """
    H = _as_arrays(H)
    stream = SplitMix64(seed)
    anchors = []
    for v, Hv in enumerate(H):
        n = Hv.shape[0]
        if m > n:
            raise ValueError(f"view {v}: m={m} anchors exceed N={n} samples")
        rng = stream.spawn()
        rows = Hv
        if sample_limit and n > sample_limit and m <= sample_limit:
            rows = Hv[sample_indices(n, sample_limit, rng)]
        anchors.append(kmeans(rows, m, seed=rng.next_u64()).centroids)
    return anchors


def update_Z(B, H, lam, cfg: SolverConfig) -> np.ndarray:
    """Exact minimizer over Z with anchors and weights fixed.

    Z = (1+alpha) [beta I + sum_v lam_v^2 (B^v B^v' + alpha I)]^{-1} sum_v lam_v^2 B^v H^v'
    """
    H = _as_arrays(H)
    m = B[0].shape[0]
    n = H[0].shape[0]
    lhs = cfg.beta * np.eye(m)
    for Bv, lv in zip(B, lam):
        lhs += lv * lv * (Bv @ Bv.T + cfg.alpha * np.eye(m))
    lhs = 0.5 * (lhs + lhs.T)
    scaled = [(1.0 + cfg.alpha) * lv * lv * Bv for Bv, lv in zip(B, lam)]
    # Fortran order lets the triangular solves run in place
    rhs = np.zeros((m, n), order="F")
    for block in _blocks(n):
        for Bv, Hv in zip(scaled, H):
            rhs[:, block] += Bv @ Hv[block].T
    return solve_spd(lhs, rhs, overwrite_rhs=True)


def gram_eigs(H) -> list[SymEig]:
    """Eigendecompositions of ``H^v' H^v``; these are fixed for a whole fit."""
    return [sym_eig(Hv.T @ Hv) for Hv in _as_arrays(H)]


def update_B(Z, H, cfg: SolverConfig, t_eigs: list[SymEig] | None = None) -> list[np.ndarray]:
    """Per-view anchors from the Sylvester equation ``R B + coeff B T = C``.

    ``R = Z Z'``, ``T = H' H`` and ``C = (1+alpha) Z H``.  Setting the
    gradient in ``B^v`` to zero gives ``coeff = alpha``; the view weight
    ``lam_v^2`` multiplies both terms and cancels, so it does not appear.
    ``paper_beta`` mode uses ``coeff = beta`` instead, which is not a
    stationary point unless alpha == beta.
    """
    H = _as_arrays(H)
    if t_eigs is None:
        t_eigs = gram_eigs(H)
    R = Z @ Z.T
    eig_R = sym_eig(0.5 * (R + R.T))
    coeff = cfg.sylvester_coeff
    return [
        solve_sylvester_spd(None, None, coeff, (1.0 + cfg.alpha) * (Z @ Hv), eig_R=eig_R, eig_T=eT)
        for Hv, eT in zip(H, t_eigs)
    ]


def _sqnorm(A) -> float:
    # ravel in memory order: no copy for C- or Fortran-contiguous input
    a = np.ravel(A, order="K")
    return float(np.dot(a, a))


def view_losses(Z, B, H, alpha: float) -> np.ndarray:
    """Per-view loss ``M_v = ||H' - B' Z||^2 + alpha ||B H' - Z||^2``."""
    H = _as_arrays(H)
    out = np.zeros(len(H))
    n = Z.shape[1]
    for block in _blocks(n):
        Zb = Z[:, block]
        for v, (Bv, Hv) in enumerate(zip(B, H)):
            recon = Hv[block] - Zb.T @ Bv
            sim = Bv @ Hv[block].T - Zb
            out[v] += _sqnorm(recon) + alpha * _sqnorm(sim)
    return out


def update_lambda(M) -> np.ndarray:
    """Minimize ``sum_v lam_v^2 M_v`` on the simplex: ``lam_v ∝ 1/M_v``.

    Views with ``M_v <= 1e-15`` take the whole weight, split evenly, which is
    the limit of the closed form as those losses go to zero.
    """
    M = np.asarray(M, dtype=np.float64)
    if np.any(M < 0) or not np.all(np.isfinite(M)):
        raise ValueError("view losses must be finite and nonnegative")
    zero = M <= 1e-15
    if zero.any():
        logger.warning("view weights: %d view(s) with vanishing loss take all weight", int(zero.sum()))
        return zero / zero.sum()
    inv = 1.0 / M
    return inv / inv.sum()


def objective(Z, B, H, lam, cfg: SolverConfig) -> float:
    M = view_losses(Z, B, H, cfg.alpha)
    lam = np.asarray(lam, dtype=np.float64)
    return float(np.dot(lam * lam, M) + cfg.beta * _sqnorm(Z))


def _check(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SolverError(f"non-finite values after {name}")


def fit(H, cfg: SolverConfig, B0=None, t_eigs=None) -> AnchorModel:
    """Run the alternating updates until the relative objective change is below ``cfg.tol``.

    ``B0`` overrides the k-means initialization; ``t_eigs`` may carry
    precomputed :func:`gram_eigs` for the same views.
    """
    H = _as_arrays(H)
    if not H:
        raise ValueError("fit needs at least one view")
    n = H[0].shape[0]
    if any(Hv.shape[0] != n for Hv in H):
        raise ValueError("all views must have the same number of samples")
    V = len(H)

    B = [np.array(b, dtype=np.float64) for b in B0] if B0 is not None else init_anchors(
        H, cfg.m, cfg.seed, cfg.init_sample
    )
    _check("init_anchors", *B)
    if t_eigs is None:
        t_eigs = gram_eigs(H)
    lam = np.full(V, 1.0 / V)

    trace, lam_trace = [], []
    converged = False
    it = 0
    Z = None
    for it in range(1, cfg.max_iter + 1):
        Z = None  # the previous graph is not needed and would double peak memory
        Z = update_Z(B, H, lam, cfg)
        _check("update_Z", Z)
        B = update_B(Z, H, cfg, t_eigs)
        _check("update_B", *B)
        M = view_losses(Z, B, H, cfg.alpha)
        lam = update_lambda(M)
        _check("update_lambda", lam)
        obj = float(np.dot(lam * lam, M) + cfg.beta * _sqnorm(Z))
        trace.append(obj)
        lam_trace.append(lam.copy())
        logger.debug("iter %d objective %.10g", it, obj)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) / max(1.0, trace[-2]) < cfg.tol:
            converged = True
            break

    return AnchorModel(
        Z=Z,
        B=B,
        lam=lam,
        objective_trace=np.asarray(trace),
        lambda_trace=np.asarray(lam_trace),
        iterations=it,
        converged=converged,
        config=cfg,
    )
