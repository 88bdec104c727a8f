"""Spectral variant: pick c from the kernel spectrum, then k-means on the embedding."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ClusterState, PypParams, RunResult, fit
from .dataset import Dataset


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns, orthonormal


def median_sigma(points: np.ndarray) -> float:
    """Median pairwise Euclidean distance; 1.0 when every point coincides."""
    x = np.asarray(points, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(x.shape[0], k=1)
    med = float(np.median(d[iu])) if iu[0].size else 0.0
    return med if med > 0 else 1.0


def build_kernel(ds: Dataset, kind: str = "rbf", sigma: Optional[float] = None) -> np.ndarray:
    """Gram matrix of ``ds``: ``rbf`` (exp(-|x-y|^2 / 2 sigma^2)) or ``linear``."""
    x = ds.points
    if kind == "linear":
        k = x @ x.T
    elif kind == "rbf":
        if sigma is None:
            sigma = median_sigma(x)
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        diff = x[:, None, :] - x[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        k = np.exp(-sq / (2.0 * sigma * sigma))
    else:
        raise ValueError(f"unknown kernel {kind!r}")
    return 0.5 * (k + k.T)


def eigensystem(k: np.ndarray) -> EigenSystem:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("kernel must be square")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel has non-finite entries")
    try:
        vals, vecs = np.linalg.eigh(k)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigendecomposition failed: {exc}") from exc
    return EigenSystem(vals[::-1].copy(), vecs[:, ::-1].copy())


def select_c(eigenvalues, lam: float, theta: float) -> int:
    """Cluster count read off a descending spectrum.

    The largest c with ``ev[c] > lam - ln(c) theta`` and
    ``ev[c+1] < lam - ln(c+1) theta`` (1-based); failing that, the largest c
    meeting only the first inequality; failing that, 1.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64)
    n = ev.size

    def above(c: int) -> bool:
        return ev[c - 1] > lam - math.log(c) * theta

    for c in range(n - 1, 0, -1):
        if above(c) and ev[c] < lam - math.log(c + 1) * theta:
            return c
    for c in range(n, 0, -1):
        if above(c):
            return c
    return 1


def trace_score(k: np.ndarray, y: np.ndarray, lam: float, theta: float) -> float:
    """tr(Y^T (K - (lam - ln(c) theta) I) Y) with c = number of columns of Y."""
    c = y.shape[1]
    shift = lam - math.log(c) * theta
    return float(np.trace(y.T @ k @ y) - shift * c)


def spectral_fit_kernel(k: np.ndarray, lam: float, theta: float, seed: int = 0,
                        n_init: int = 10) -> tuple[RunResult, EigenSystem, int]:
    t0 = time.perf_counter()
    eig = eigensystem(k)
    c = select_c(eig.eigenvalues, lam, theta)
    y = eig.eigenvectors[:, :c]
    emb = Dataset(y)
    res = fit(emb, PypParams(variant="kmeans", fixed_c=c, seed=seed, n_init=n_init))
    res.wall_time = time.perf_counter() - t0
    return res, eig, c


def spectral_fit(ds: Dataset, lam: float, theta: float, kind: str = "rbf",
                 sigma: Optional[float] = None, seed: int = 0) -> RunResult:
    """Cluster ``ds`` in the span of the top-c kernel eigenvectors.

    The returned centers live in the embedding space; assignments index the
    original rows.
    """
    if ds.n == 1:
        state = ClusterState(np.ones((1, 1)), np.zeros(1, dtype=np.int64), np.array([1]))
        return RunResult(state, [0.0], 0, 0.0, True)
    res, _, _ = spectral_fit_kernel(build_kernel(ds, kind, sigma), lam, theta, seed)
    return res
