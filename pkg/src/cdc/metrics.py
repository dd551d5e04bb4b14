"""External clustering metrics: ACC, NMI, ARI and F1.

All metrics treat label values as arbitrary identifiers, so any consistent
relabeling of either partition leaves them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "ContingencyTable",
    "contingency",
    "hungarian_map",
    "accuracy",
    "nmi",
    "ari",
    "f1",
    "evaluate",
]


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray  # (predicted clusters, true classes)
    pred_values: np.ndarray
    true_values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _pair(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    return pred, truth


def contingency(pred, truth) -> ContingencyTable:
    pred, truth = _pair(pred, truth)
    pv, pi = np.unique(pred, return_inverse=True)
    tv, ti = np.unique(truth, return_inverse=True)
    counts = np.zeros((pv.size, tv.size), dtype=np.int64)
    np.add.at(counts, (pi, ti), 1)
    return ContingencyTable(counts, pv, tv)


def hungarian_map(ct) -> np.ndarray:
    """Optimal one-to-one map from predicted clusters to true classes.

    Returns ``mapping`` with ``mapping[i]`` the true-class column matched to
    predicted row ``i``, or -1 when the row is matched to padding.
    """
    counts = ct.counts if isinstance(ct, ContingencyTable) else np.asarray(ct)
    r, c = counts.shape
    size = max(r, c)
    padded = np.zeros((size, size), dtype=counts.dtype)
    padded[:r, :c] = counts
    rows, cols = linear_sum_assignment(padded, maximize=True)
    mapping = np.full(r, -1, dtype=np.int64)
    for i, j in zip(rows, cols):
        if i < r and j < c:
            mapping[i] = j
    return mapping


def accuracy(pred, truth) -> float:
    ct = contingency(pred, truth)
    mapping = hungarian_map(ct)
    matched = sum(ct.counts[i, j] for i, j in enumerate(mapping) if j >= 0)
    return float(matched / ct.n)


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth, average: str = "arithmetic") -> float:
    """Mutual information normalized by the mean of the two entropies.

    ``average`` is ``"arithmetic"`` (default) or ``"geometric"``.  A
    single-block partition on either side scores 0.
    """
    ct = contingency(pred, truth)
    n = ct.n
    joint = ct.counts.astype(np.float64)
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    h_pred, h_true = _entropy(pa), _entropy(pb)
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    nz = joint > 0
    outer = np.outer(pa, pb)
    mi = float(np.sum(joint[nz] / n * np.log(joint[nz] * n / outer[nz])))
    if average == "arithmetic":
        denom = 0.5 * (h_pred + h_true)
    elif average == "geometric":
        denom = np.sqrt(h_pred * h_true)
    else:
        raise ValueError(f"unknown average {average!r}")
    if denom <= 0:
        return 0.0
    return float(min(1.0, max(0.0, mi / denom)))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def ari(pred, truth) -> float:
    """Adjusted Rand index (Hubert & Arabie)."""
    ct = contingency(pred, truth)
    n = ct.n
    sum_ij = _comb2(ct.counts).sum()
    sum_a = _comb2(ct.counts.sum(axis=1)).sum()
    sum_b = _comb2(ct.counts.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def f1(pred, truth, average: str = "macro") -> float:
    """F1 per true class after optimal relabeling, then averaged.

    The relabeling maximizes the matched count, as for accuracy; ties are
    broken toward the higher F1 sum.

    ``average="macro"`` weights every class equally; ``"weighted"`` weights
    by class support.  A class that receives no predicted cluster scores 0.
    """
    ct = contingency(pred, truth)
    counts = ct.counts
    support = counts.sum(axis=0)
    pred_size = counts.sum(axis=1)
    pair_f1 = 2.0 * counts / (pred_size[:, None] + support[None, :])
    # several maps can tie on matched count; among those take the one with
    # the best F1 so the score does not depend on how clusters are numbered
    mapping = hungarian_map(counts * (counts.shape[1] + 1.0) + pair_f1)
    scores = np.zeros(counts.shape[1])
    for i, j in enumerate(mapping):
        if j < 0:
            continue
        tp = counts[i, j]
        if tp == 0:
            continue
        precision = tp / pred_size[i]
        recall = tp / support[j]
        scores[j] = 2 * precision * recall / (precision + recall)
    if average == "macro":
        return float(scores.mean())
    if average == "weighted":
        return float(np.dot(scores, support) / support.sum())
    raise ValueError(f"unknown average {average!r}")


def evaluate(pred, truth) -> dict[str, float]:
    return {
        "acc": accuracy(pred, truth),
        "nmi": nmi(pred, truth),
        "ari": ari(pred, truth),
        "f1": f1(pred, truth),
    }
