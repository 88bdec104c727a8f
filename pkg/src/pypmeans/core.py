"""pyp-means: k-means with a cluster-count dependent spawning threshold.

A point whose squared distance to every center exceeds ``lam - ln(c) * theta``
is held back (it is "lambda-out") and handled by a furthest-first pass that
may spawn new clusters.  ``theta = 0`` recovers dp-means; the ``kmeans``
variant runs plain Lloyd iterations with a fixed cluster count.

Cluster ids are 0-based inside the library.  The CLI writes them 1-based.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset

VARIANTS = ("pyp", "dp", "kmeans")


class ClusterCapError(ValueError):
    """The cluster count reached exp(lam / theta); the threshold is no longer positive."""


class DegenerateLambdaError(ValueError):
    """The data has no spread, so no positive lambda can be estimated."""


@dataclass(frozen=True)
class PypParams:
    lam: float = 1.0
    theta: float = 0.0
    max_iter: int = 200
    tol: float = 1e-9
    agglomeration: bool = True
    variant: str = "pyp"
    fixed_c: Optional[int] = None
    seed: int = 0
    # Algorithm-1 form of the test: min_k d_ik - theta > lam - ln(c) * theta
    alg1_offset: bool = False
    # restarts for the kmeans variant; the lowest-cost run is kept
    n_init: int = 10

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "dp":
            object.__setattr__(self, "theta", 0.0)
        if self.variant == "kmeans":
            if self.fixed_c is None or self.fixed_c < 1:
                raise ValueError("variant 'kmeans' needs fixed_c >= 1")
        else:
            if not self.lam > 0:
                raise ValueError(f"lam must be > 0, got {self.lam}")
            if not self.theta >= 0:
                raise ValueError(f"theta must be >= 0, got {self.theta}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")

    @property
    def creation_offset(self) -> float:
        return self.theta if self.alg1_offset else 0.0


@dataclass(frozen=True)
class ClusterState:
    centers: np.ndarray
    assignments: np.ndarray
    sizes: np.ndarray

    @property
    def c(self) -> int:
        return self.centers.shape[0]


@dataclass
class RunResult:
    state: ClusterState
    objective_trace: list[float]
    iterations: int
    wall_time: float
    converged: bool
    # per-iteration instrumentation
    dr_sizes: list[int] = field(default_factory=list)
    recluster_times: list[float] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (len(x), len(centers)).

    Computed from explicit differences rather than the dot-product expansion so
    the values are exact-ish and never negative.
    """
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cap_allows(params: PypParams, c: int) -> bool:
    """True when a cluster count of ``c`` respects c < exp(lam / theta)."""
    if params.theta == 0:
        return True
    return math.log(c) < params.lam / params.theta


def threshold(params: PypParams, c: int) -> float:
    """New-cluster threshold ``lam - ln(c) * theta`` for the current count ``c``."""
    if c < 1:
        raise ValueError("c must be >= 1")
    if not cap_allows(params, c):
        raise ClusterCapError(
            f"cluster cap reached: c={c} >= exp(lam/theta)={math.exp(params.lam / params.theta):.6g}"
        )
    return params.lam - math.log(c) * params.theta


def penalty(params: PypParams, c: int) -> float:
    if params.variant == "kmeans":
        return 0.0
    return (params.lam - math.log(c) * params.theta) * c


def partition(ds: Dataset, state: ClusterState, params: PypParams):
    """Split points into lambda-in (assigned to the nearest center) and lambda-out.

    Returns ``(assignments, d_r)`` where ``assignments[i] == -1`` for every
    index in ``d_r`` (ascending order).
    """
    if state.c == 0:
        raise ValueError("partition needs at least one center")
    d = sq_dists(ds.points, state.centers)
    nearest = d.argmin(axis=1)
    dmin = d[np.arange(ds.n), nearest]
    out = dmin - params.creation_offset > threshold(params, state.c)
    assignments = np.where(out, -1, nearest).astype(np.int64)
    return assignments, np.flatnonzero(out)


def recluster_dr(ds: Dataset, d_r, state: ClusterState, params: PypParams,
                 log: Optional[list] = None) -> ClusterState:
    """Furthest-first pass over the lambda-out points ``d_r``.

    The remaining point with the largest distance to its nearest center is
    taken first.  It spawns a singleton cluster when that distance beats the
    threshold for the current count (and the cap permits), otherwise it joins
    its nearest center.  Once a point fails to spawn, the count and the
    centers are frozen, so the rest are taken in descending-distance order and
    none of them can spawn either.

    ``state.assignments`` may carry -1 for the ``d_r`` entries.  ``log``, when
    given, receives one ``(index, min_sq_dist, spawned)`` tuple per point.
    Returned sizes count members only; stale centers keep size 0 until
    :func:`update_centers` removes them.
    """
    x = ds.points
    rem = np.asarray(d_r, dtype=np.int64)
    assignments = state.assignments.copy()
    centers = [row for row in state.centers]
    c = len(centers)
    offset = params.creation_offset

    d = sq_dists(x[rem], state.centers)
    near = d.argmin(axis=1)
    dmin = d[np.arange(rem.size), near]

    while rem.size:
        j = int(np.argmax(dmin))
        i = int(rem[j])
        if cap_allows(params, c + 1) and dmin[j] - offset > threshold(params, c):
            if log is not None:
                log.append((i, float(dmin[j]), True))
            centers.append(x[i].copy())
            assignments[i] = c
            c += 1
            keep = np.ones(rem.size, dtype=bool)
            keep[j] = False
            rem, near, dmin = rem[keep], near[keep], dmin[keep]
            dnew = np.einsum("ij,ij->i", x[rem] - x[i], x[rem] - x[i])
            closer = dnew < dmin
            near[closer] = c - 1
            dmin = np.where(closer, dnew, dmin)
            continue

        order = np.argsort(-dmin, kind="stable")
        if log is not None:
            thr = threshold(params, c)
            grow = cap_allows(params, c + 1)
            for k in order:
                log.append((int(rem[k]), float(dmin[k]), bool(grow and dmin[k] - offset > thr)))
        assignments[rem[order]] = near[order]
        break

    centers_arr = np.vstack(centers)
    sizes = np.bincount(assignments[assignments >= 0], minlength=c)
    return ClusterState(centers_arr, assignments, sizes)


def update_centers(ds: Dataset, state: ClusterState) -> ClusterState:
    """Move every center to the mean of its members; drop clusters with none.

    Surviving clusters keep their relative order when ids are compacted.
    """
    c = state.c
    sizes = np.bincount(state.assignments, minlength=c)
    keep = sizes > 0
    remap = np.cumsum(keep) - 1
    assignments = remap[state.assignments]
    k = int(keep.sum())
    sizes = sizes[keep]
    sums = np.column_stack([
        np.bincount(assignments, weights=ds.points[:, j], minlength=k) for j in range(ds.d)
    ])
    return ClusterState(sums / sizes[:, None], assignments, sizes)


def merge_gain_threshold(params: PypParams, c: int, n1: int, n2: int) -> float:
    """Largest squared center separation at which merging two clusters pays off.

    ``c`` is the count before the merge.  The bracket is the drop in the
    penalty term going from ``c`` to ``c - 1`` clusters; merging raises the
    k-means cost by ``n1*n2/(n1+n2) * |mu1 - mu2|^2``.  May be negative.
    """
    if c < 2:
        raise ValueError("merging needs c >= 2")
    return (n1 + n2) / (n1 * n2) * _penalty_gap(params, c)


def _penalty_gap(params: PypParams, c: int) -> float:
    return params.lam - params.theta * (c * math.log(c) - (c - 1) * math.log(c - 1))


def agglomerate(ds: Dataset, state: ClusterState, params: PypParams,
                log: Optional[list] = None, max_merges: Optional[int] = None) -> ClusterState:
    """Greedily merge center pairs while a merge lowers the objective.

    The qualifying pair with the smallest ratio of squared separation to its
    merge threshold goes first; ties fall to the lowest (j, k).  ``log``
    receives ``(j, k, sq_dist, threshold)`` per merge, ids as they were at the
    time of the merge.  ``max_merges`` stops early (``None`` runs to a fixpoint).
    """
    centers = state.centers.copy()
    sizes = state.sizes.astype(np.int64).copy()
    assignments = state.assignments.copy()

    merges = 0
    while centers.shape[0] >= 2 and (max_merges is None or merges < max_merges):
        c = centers.shape[0]
        gap = _penalty_gap(params, c)
        if gap <= 0:
            break
        dist = sq_dists(centers, centers)
        thr = (sizes[:, None] + sizes[None, :]) / (sizes[:, None] * sizes[None, :]) * gap
        ratio = dist / thr
        iu = np.triu_indices(c, k=1)
        r = ratio[iu]
        ok = dist[iu] < thr[iu]
        if not ok.any():
            break
        r = np.where(ok, r, np.inf)
        best = int(np.argmin(r))
        j, k = int(iu[0][best]), int(iu[1][best])
        if log is not None:
            log.append((j, k, float(dist[j, k]), float(thr[j, k])))
        nj, nk = sizes[j], sizes[k]
        centers[j] = (nj * centers[j] + nk * centers[k]) / (nj + nk)
        sizes[j] = nj + nk
        centers = np.delete(centers, k, axis=0)
        sizes = np.delete(sizes, k)
        assignments[assignments == k] = j
        assignments[assignments > k] -= 1
        merges += 1

    return ClusterState(centers, assignments, sizes)


def km_cost(ds: Dataset, state: ClusterState) -> float:
    diff = ds.points - state.centers[state.assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def objective(ds: Dataset, state: ClusterState, params: PypParams) -> float:
    """k-means cost plus the count penalty ``(lam - ln(c) * theta) * c``."""
    return km_cost(ds, state) + penalty(params, state.c)


def initial_state(ds: Dataset) -> ClusterState:
    mean = ds.points.mean(axis=0, keepdims=True)
    return ClusterState(mean, np.zeros(ds.n, dtype=np.int64), np.array([ds.n]))


def fit(ds: Dataset, params: PypParams, pass_log: Optional[list] = None) -> RunResult:
    """Run pyp-means (or the dp / kmeans configurations) to convergence.

    Starts from a single cluster at the global mean and iterates
    partition -> furthest-first pass -> center update -> agglomeration until
    the assignments stop changing and the objective moves by at most ``tol``.
    ``pass_log`` collects one :func:`recluster_dr` log per furthest-first pass.
    """
    if params.variant == "kmeans":
        return _fit_kmeans(ds, params)

    t0 = time.perf_counter()
    state = initial_state(ds)
    prev_obj = objective(ds, state, params)
    trace: list[float] = []
    dr_sizes: list[int] = []
    rc_times: list[float] = []
    converged = False

    for _ in range(params.max_iter):
        prev_assign = state.assignments
        assignments, d_r = partition(ds, state, params)
        partial = ClusterState(state.centers, assignments, state.sizes)
        t1 = time.perf_counter()
        if d_r.size:
            plog = [] if pass_log is not None else None
            partial = recluster_dr(ds, d_r, partial, params, plog)
            if pass_log is not None:
                pass_log.append(plog)
        rc_times.append(time.perf_counter() - t1)
        dr_sizes.append(int(d_r.size))
        state = update_centers(ds, partial)
        if params.agglomeration:
            state = agglomerate(ds, state, params)
        obj = objective(ds, state, params)
        trace.append(obj)
        if np.array_equal(state.assignments, prev_assign) and abs(obj - prev_obj) <= params.tol:
            converged = True
            break
        prev_obj = obj

    return RunResult(state, trace, len(trace), time.perf_counter() - t0, converged,
                     dr_sizes, rc_times)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    dmin = sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = dmin.sum()
        if total <= 0:
            break
        idx = rng.choice(n, p=dmin / total)
        centers.append(x[idx])
        dmin = np.minimum(dmin, sq_dists(x, x[idx][None, :])[:, 0])
    return np.vstack(centers)


def _fit_kmeans(ds: Dataset, params: PypParams) -> RunResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(params.seed)
    k = min(params.fixed_c, ds.n)
    best = None
    for _ in range(params.n_init):
        centers = _kmeanspp(ds.points, k, rng)
        state = ClusterState(centers, np.full(ds.n, -1, dtype=np.int64), np.zeros(len(centers), dtype=np.int64))
        trace: list[float] = []
        converged = False
        for _ in range(params.max_iter):
            prev = state.assignments
            assign = sq_dists(ds.points, state.centers).argmin(axis=1)
            state = update_centers(ds, ClusterState(state.centers, assign, state.sizes))
            trace.append(km_cost(ds, state))
            if np.array_equal(state.assignments, prev):
                converged = True
                break
        if best is None or trace[-1] < best[1][-1]:
            best = (state, trace, converged)
    state, trace, converged = best
    return RunResult(state, trace, len(trace), time.perf_counter() - t0, converged)


def estimate_lambda(ds: Dataset, rough_c: int, theta_ratio: float = 10.0):
    """Furthest-first estimate of ``(lam, theta)`` for a rough cluster count.

    Seeds one center at the global mean, then ``rough_c`` times adds the point
    furthest (in min squared distance) from all current centers.  ``lam`` is
    that distance at the last step and ``theta = lam / theta_ratio``.
    """
    if rough_c < 1:
        raise ValueError("rough_c must be >= 1")
    if rough_c > ds.n:
        raise ValueError(f"rough_c={rough_c} exceeds the number of points n={ds.n}")
    x = ds.points
    dmin = sq_dists(x, x.mean(axis=0, keepdims=True))[:, 0]
    lam = 0.0
    for _ in range(rough_c):
        i = int(np.argmax(dmin))
        lam = float(dmin[i])
        dmin = np.minimum(dmin, sq_dists(x, x[i][None, :])[:, 0])
    if not lam > 0:
        raise DegenerateLambdaError("degenerate lambda: furthest-first distance is zero")
    return lam, lam / theta_ratio
