"""External clustering quality metrics: NMI, ARI, and matched accuracy.

All three metrics are permutation invariant: relabeling the clusters of
either argument never changes the score.  They share one substrate, the
contingency table of label co-occurrence counts.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _check_labels(true_labels, pred_labels, min_len: int = 1):
    t = np.asarray(true_labels)
    p = np.asarray(pred_labels)
    if t.ndim != 1 or p.ndim != 1:
        raise ValueError("label arrays must be 1-D")
    if t.shape[0] != p.shape[0]:
        raise ValueError(
            f"label length mismatch: {t.shape[0]} true vs {p.shape[0]} predicted"
        )
    if t.shape[0] < min_len:
        raise ValueError(f"need at least {min_len} samples, got {t.shape[0]}")
    return t, p


def contingency_table(true_labels, pred_labels) -> np.ndarray:
    """Co-occurrence counts between two labelings.

    Returns
    -------
    ndarray of shape (k_true, k_pred), dtype int64
        Entry (i, j) counts samples in true class i and predicted
        cluster j.  Entries sum to the number of samples.
    """
    t, p = _check_labels(true_labels, pred_labels)
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    kt = int(ti.max()) + 1
    kp = int(pi.max()) + 1
    table = np.zeros((kt, kp), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def _entropy(counts: np.ndarray) -> float:
    """Shannon entropy (nats) of a marginal count vector."""
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels, norm: str = "sqrt") -> float:
    """Normalized mutual information between two labelings.

    Parameters
    ----------
    norm : {"sqrt", "arithmetic"}
        Normalizer for the mutual information: the geometric mean
        ``sqrt(H(U) * H(V))`` (default) or the arithmetic mean
        ``(H(U) + H(V)) / 2``.

    Returns
    -------
    float in [0, 1].  Two single-cluster labelings score 1.0; if exactly
    one side has zero entropy the score is 0.0.
    """
    if norm not in ("sqrt", "arithmetic"):
        raise ValueError(f"unknown normalization {norm!r}")
    table = contingency_table(true_labels, pred_labels)
    n = table.sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    hu = _entropy(a)
    hv = _entropy(b)
    if hu == 0.0 and hv == 0.0:
        return 1.0
    if hu == 0.0 or hv == 0.0:
        return 0.0
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = np.outer(a, b)[nz].astype(np.float64)
    mi = float((nij / n * np.log(n * nij / outer)).sum())
    if norm == "sqrt":
        denom = np.sqrt(hu * hv)
    else:
        denom = 0.5 * (hu + hv)
    # Tiny negative MI can appear from rounding on independent labelings.
    return float(min(1.0, max(0.0, mi / denom)))


def _comb2(x: np.ndarray) -> np.ndarray:
    return x * (x - 1) / 2.0


def ari(true_labels, pred_labels) -> float:
    """Adjusted Rand index via pair counting on the contingency table.

    Returns
    -------
    float in [-1, 1]; 1 for identical partitions, ~0 for independent
    ones.  Degenerate pairs whose expected and maximum indices coincide
    (both partitions trivial in the same way) score 1.0.
    """
    _check_labels(true_labels, pred_labels, min_len=2)
    table = contingency_table(true_labels, pred_labels)
    n = table.sum()
    index = _comb2(table.astype(np.float64)).sum()
    sum_a = _comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = _comb2(table.sum(axis=0).astype(np.float64)).sum()
    expected = sum_a * sum_b / _comb2(np.float64(n))
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def acc(true_labels, pred_labels) -> float:
    """Clustering accuracy under the best cluster-to-class matching.

    Pads the contingency table to a square and solves the assignment
    problem exactly (Hungarian method, O(K^3)) on its negation, i.e.
    maximizes the number of agreeing samples over all injective maps
    from predicted clusters to true classes.

    Returns
    -------
    float in [0, 1].
    """
    t, _ = _check_labels(true_labels, pred_labels)
    table = contingency_table(true_labels, pred_labels)
    k = max(table.shape)
    padded = np.zeros((k, k), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(-padded)
    matched = padded[rows, cols].sum()
    return float(matched / t.shape[0])
