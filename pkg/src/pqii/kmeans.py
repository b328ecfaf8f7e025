"""Lloyd's k-means and nearest-centroid assignment.

The assignment kernel is compiled with numba and releases the GIL, so fits
on disjoint data can run concurrently from a thread pool. Squared distances
are accumulated in float64, coordinate by coordinate in ascending order;
ties go to the lowest centroid index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

__all__ = [
    "KMeansError",
    "KMeansResult",
    "assign",
    "kmeans_fit",
    "nearest_centroid",
    "DEFAULT_MAX_ITERS",
    "DEFAULT_TOL",
]

DEFAULT_MAX_ITERS = 20
DEFAULT_TOL = 1e-4


class KMeansError(ValueError):
    pass


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray  # (k, d) float32
    assignments: np.ndarray  # (N,) int64
    inertia: float
    iterations_run: int
    # inertia after the initial assignment and after every Lloyd iteration
    inertia_history: list[float] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@numba.njit(nogil=True, cache=True)
def _assign_kernel(x, centroids_t, labels, dists):
    n, d = x.shape
    k = centroids_t.shape[1]
    acc = np.empty(k, dtype=np.float64)
    for i in range(n):
        acc[:] = 0.0
        for t in range(d):
            xv = np.float64(x[i, t])
            for j in range(k):
                diff = xv - centroids_t[t, j]
                acc[j] += diff * diff
        best = acc[0]
        bj = 0
        for j in range(1, k):
            if acc[j] < best:
                best = acc[j]
                bj = j
        labels[i] = bj
        dists[i] = best


@numba.njit(nogil=True, cache=True)
def _accumulate_kernel(x, labels, k, sums, counts):
    n, d = x.shape
    sums[:, :] = 0.0
    counts[:] = 0
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        for t in range(d):
            sums[c, t] += np.float64(x[i, t])


def assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid for every row: ``(labels int64, squared distances float64)``."""
    points = np.ascontiguousarray(points, dtype=np.float32)
    centroids = np.asarray(centroids)
    if centroids.ndim != 2 or centroids.shape[0] == 0:
        raise KMeansError("empty centroid set")
    if points.ndim != 2 or points.shape[1] != centroids.shape[1]:
        raise KMeansError(
            f"dimension mismatch: points {points.shape} vs centroids {centroids.shape}"
        )
    # float32 centroids widened exactly; transposed so the inner loop runs over k
    centroids_t = np.ascontiguousarray(centroids.astype(np.float32).astype(np.float64).T)
    labels = np.empty(points.shape[0], dtype=np.int64)
    dists = np.empty(points.shape[0], dtype=np.float64)
    _assign_kernel(points, centroids_t, labels, dists)
    return labels, dists


def nearest_centroid(point, centroids) -> tuple[int, float]:
    point = np.asarray(point, dtype=np.float32).reshape(1, -1)
    labels, dists = assign(point, centroids)
    return int(labels[0]), float(dists[0])


def _update(points, labels, dists, centroids):
    k = centroids.shape[0]
    sums = np.empty((k, points.shape[1]), dtype=np.float64)
    counts = np.empty(k, dtype=np.int64)
    _accumulate_kernel(points, labels, k, sums, counts)
    new = centroids.copy()
    live = counts > 0
    new[live] = (sums[live] / counts[live, None]).astype(np.float32)
    empty = np.flatnonzero(~live)
    if empty.size:
        # reseed onto the points farthest from their current centroid
        order = np.argsort(-dists, kind="stable")
        new[empty] = points[order[: empty.size]]
    return new


def kmeans_fit(
    points: np.ndarray,
    k: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    init: np.ndarray | None = None,
) -> KMeansResult:
    """Lloyd's k-means.

    Initial centroids are ``k`` distinct rows sampled uniformly with ``seed``
    unless ``init`` supplies them. Iteration stops once the inertia
    improvement drops below ``tol * max(1, previous inertia)`` or after
    ``max_iters`` update steps. Empty clusters are reseeded onto the points
    farthest from their assigned centroid.
    """
    points = np.ascontiguousarray(points, dtype=np.float32)
    if points.ndim != 2:
        raise KMeansError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise KMeansError(f"k must be >= 1, got {k}")
    if k > n:
        raise KMeansError(f"k={k} exceeds number of points {n}")
    if max_iters < 1:
        raise KMeansError(f"max_iters must be >= 1, got {max_iters}")
    if tol < 0:
        raise KMeansError(f"tol must be >= 0, got {tol}")

    if init is None:
        rng = np.random.default_rng(seed)
        centroids = points[rng.choice(n, size=k, replace=False)].copy()
    else:
        centroids = np.array(init, dtype=np.float32).reshape(k, points.shape[1])

    labels, dists = assign(points, centroids)
    inertia = float(dists.sum())
    history = [inertia]
    iterations = 0
    for it in range(1, max_iters + 1):
        centroids = _update(points, labels, dists, centroids)
        labels, dists = assign(points, centroids)
        new_inertia = float(dists.sum())
        history.append(new_inertia)
        iterations = it
        improvement = inertia - new_inertia
        threshold = tol * max(1.0, inertia)
        inertia = new_inertia
        if improvement < threshold:
            break

    return KMeansResult(centroids, labels, inertia, iterations, history)
