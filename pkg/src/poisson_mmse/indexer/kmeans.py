"""Lloyd's k-means with k-means++ seeding over a normalized patch corpus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

__all__ = ["ClusterModel", "kmeans_cluster", "kmeans_plusplus", "assign_nearest"]

_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Cluster centroids with the number of corpus patches behind each.

    ``labels`` and ``wcss_history`` are filled in by :func:`kmeans_cluster`
    and are not persisted with an index.
    """

    centroids: np.ndarray
    counts: np.ndarray
    labels: np.ndarray | None = field(default=None, compare=False, repr=False)
    wcss_history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        centroids = np.asarray(self.centroids)
        if centroids.dtype.kind != "f":
            centroids = centroids.astype(np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if centroids.ndim != 2 or counts.shape != (len(centroids),):
            raise ValueError("need one count per centroid row")
        if np.any(counts < 1):
            raise ValueError("every cluster must hold at least one patch")
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "counts", counts)

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def assign_nearest(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of, and squared distance to, the nearest centroid for each row.

    Ties go to the lower centroid index.
    """
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    labels = np.empty(len(X), dtype=np.int64)
    dist = np.empty(len(X))
    for start in range(0, len(X), _CHUNK):
        block = X[start:start + _CHUNK]
        d2 = c_sq[None, :] - 2.0 * (block @ centroids.T)
        lab = np.argmin(d2, axis=1)
        labels[start:start + len(block)] = lab
        diff = block - centroids[lab]
        dist[start:start + len(block)] = np.einsum("ij,ij->i", diff, diff)
    return labels, dist


@numba.njit(cache=True)
def _shrink_closest(X, p, closest):
    # a partial sum already past the current best cannot win, so stop early
    n, d = X.shape
    for i in range(n):
        best = closest[i]
        acc = 0.0
        for k in range(d):
            diff = X[i, k] - X[p, k]
            acc += diff * diff
            if acc >= best:
                break
        if acc < best:
            closest[i] = acc


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``k`` initial centroids by D^2 sampling."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = len(X)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    closest = np.full(n, np.inf)
    _shrink_closest(X, chosen[0], closest)
    cdf = np.empty(n)
    for i in range(1, k):
        np.cumsum(closest, out=cdf)
        if cdf[-1] > 0:
            pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            pick = min(pick, n - 1)
        else:
            # every point coincides with a chosen centroid
            pick = int(rng.integers(n))
        chosen[i] = pick
        _shrink_closest(X, pick, closest)
    return X[chosen].copy()


def _repair_empty(labels, dist, k):
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if len(empty) == 0:
        return labels, dist
    labels = labels.copy()
    dist = dist.copy()
    for j in empty:
        # farthest patch whose cluster can spare it
        donors = counts[labels] > 1
        p = int(np.argmax(np.where(donors, dist, -1.0)))
        counts[labels[p]] -= 1
        labels[p] = j
        counts[j] = 1
        dist[p] = 0.0
    return labels, dist


def _update(X, labels, k):
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k)
    centroids = sums / counts[:, None]
    diff = X - centroids[labels]
    return centroids, counts, float(np.einsum("ij,ij->", diff, diff))


def kmeans_cluster(corpus, n_clusters: int, max_iters: int = 30, seed: int = 0,
                   tol: float = 1e-3) -> ClusterModel:
    """Cluster corpus patches with Lloyd's algorithm (Euclidean distance).

    Parameters
    ----------
    corpus : PatchCorpus or ndarray
        Normalized patches, one per row.
    n_clusters : int
        Number of clusters, ``1 <= n_clusters <= len(corpus)``.
    max_iters : int
        Maximum number of assignment/update rounds.
    seed : int
        Seed for k-means++ initialization.
    tol : float
        Stop once fewer than ``tol * N`` assignments change in a round.
        With ``tol=0`` the loop runs to a fixed point (or ``max_iters``).

    Returns
    -------
    ClusterModel
        Centroids are the exact means of their final members. A cluster
        that loses all members is reseeded with the patch farthest from
        its current centroid. ``wcss_history`` holds the within-cluster sum
        of squares after every update, which never increases.
    """
    X = np.asarray(getattr(corpus, "patches", corpus), dtype=np.float64)
    n = len(X)
    if not 1 <= n_clusters <= n:
        raise ValueError(f"need 1 <= n_clusters <= {n}, got {n_clusters}")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(X, n_clusters, rng)
    labels, dist = assign_nearest(X, centroids)
    history = []
    last = False
    for it in range(max_iters):
        labels, dist = _repair_empty(labels, dist, n_clusters)
        centroids, counts, wcss = _update(X, labels, n_clusters)
        history.append(wcss)
        if last or it == max_iters - 1:
            break
        new_labels, dist = assign_nearest(X, centroids)
        changed = int(np.count_nonzero(new_labels != labels))
        if changed == 0:
            break
        labels = new_labels
        last = changed < tol * n
    return ClusterModel(centroids, counts, labels=labels, wcss_history=tuple(history))
