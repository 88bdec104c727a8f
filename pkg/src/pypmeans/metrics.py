"""Clustering evaluation: matched accuracy, NMI, discovery rate, power-law exponent."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # rows: true classes, columns: predicted clusters

    @classmethod
    def from_labels(cls, true_labels, pred_labels) -> "ContingencyTable":
        y = np.asarray(true_labels)
        c = np.asarray(pred_labels)
        if y.shape != c.shape or y.ndim != 1:
            raise ValueError(f"label vectors differ in length: {y.shape} vs {c.shape}")
        if y.size == 0:
            raise ValueError("need at least one point")
        _, yi = np.unique(y, return_inverse=True)
        _, ci = np.unique(c, return_inverse=True)
        counts = np.zeros((yi.max() + 1, ci.max() + 1), dtype=np.int64)
        np.add.at(counts, (yi, ci), 1)
        return cls(counts)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accuracy(true_labels, pred_labels) -> float:
    """Percentage of points whose cluster maps to their class under the best bijection.

    The contingency table is zero-padded to a square and the bijection comes
    from a linear assignment on its negation.
    """
    table = ContingencyTable.from_labels(true_labels, pred_labels)
    k = max(table.counts.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[: table.counts.shape[0], : table.counts.shape[1]] = table.counts
    rows, cols = linear_sum_assignment(-square)
    return 100.0 * square[rows, cols].sum() / table.total


def _entropy(counts: np.ndarray, total: int) -> float:
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels) -> float:
    """Mutual information normalized by the geometric mean of the two entropies.

    If either partition has a single block the ratio is 0/0; identical
    partitions then score 1 and anything else 0.
    """
    table = ContingencyTable.from_labels(true_labels, pred_labels)
    n = table.total
    hx = _entropy(table.row_sums, n)
    hy = _entropy(table.col_sums, n)
    if hx == 0.0 or hy == 0.0:
        return 1.0 if table.counts.shape == (1, 1) else 0.0
    nij = table.counts
    ni = table.row_sums[:, None]
    nj = table.col_sums[None, :]
    mask = nij > 0
    mi = float((nij[mask] / n * np.log(n * nij[mask] / (ni * nj)[mask])).sum())
    return min(1.0, max(0.0, mi / math.sqrt(hx * hy)))


def discovery_rate(found_c: float, true_c: int) -> float:
    if true_c < 1:
        raise ValueError("true_c must be >= 1")
    return found_c / true_c


def alpha_hat(cluster_sizes) -> float:
    """Power-law exponent MLE 1 + c / sum(ln(x_i / x_min)); inf when all sizes match."""
    x = np.asarray(list(cluster_sizes), dtype=np.float64)
    if x.size == 0:
        raise ValueError("alpha_hat needs at least one cluster size")
    if np.any(x <= 0):
        raise ValueError("cluster sizes must be positive")
    s = float(np.log(x / x.min()).sum())
    if s == 0.0:
        return math.inf
    return 1.0 + x.size / s
