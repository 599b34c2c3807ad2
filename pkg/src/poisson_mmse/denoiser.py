"""MMSE patch estimation: the accelerated search and brute-force references."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numba
import numpy as np

from . import _search
from .core import poisson_log_pmf_array
from .indexer.index import DenoiseIndex

__all__ = [
    "DenoiseParams",
    "DegenerateWeightsError",
    "denoise_patch",
    "denoise_patches",
    "brute_force_mmse_clusters",
    "brute_force_mmse_corpus",
]


@dataclass(frozen=True)
class DenoiseParams:
    """Stopping rule of the neighbor-graph expansion.

    The search stops once the denominator changed by a relative amount
    below ``epsilon`` over the last ``window`` queue pops. With
    ``exhaustive`` the rule is disabled and every cluster is visited.
    """

    window: int = 10
    epsilon: float = 1e-12
    exhaustive: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")


class DegenerateWeightsError(ArithmeticError):
    """Every candidate has zero likelihood, so the posterior mean is undefined."""


@dataclass(frozen=True)
class _KernelData:
    logc: np.ndarray
    csum: np.ndarray
    log_counts: np.ndarray
    centroids: np.ndarray
    split_dim: np.ndarray
    threshold: np.ndarray
    children: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_indices: np.ndarray
    roots: np.ndarray
    neighbors: np.ndarray

    def args(self):
        return (self.logc, self.csum, self.log_counts, self.centroids,
                self.split_dim, self.threshold, self.children, self.leaf_start,
                self.leaf_count, self.leaf_indices, self.roots, self.neighbors)


_kernel_cache: "weakref.WeakKeyDictionary[DenoiseIndex, _KernelData]" = (
    weakref.WeakKeyDictionary())


def _kernel_data(index: DenoiseIndex) -> _KernelData:
    data = _kernel_cache.get(index)
    if data is not None:
        return data
    centroids = index.model.centroids.astype(np.float64)
    with np.errstate(divide="ignore"):
        logc = np.log(centroids)
    trees = index.forest.trees
    node_base = np.cumsum([0] + [t.n_nodes for t in trees])
    leaf_base = np.cumsum([0] + [len(t.leaf_indices) for t in trees])
    children = np.concatenate([
        np.where(t.children >= 0, t.children + node_base[i], -1)
        for i, t in enumerate(trees)])
    data = _KernelData(
        logc=logc,
        csum=centroids.sum(axis=1),
        log_counts=np.log(index.model.counts.astype(np.float64)),
        centroids=centroids,
        split_dim=np.concatenate([t.split_dim for t in trees]).astype(np.int64),
        threshold=np.concatenate([t.threshold for t in trees]).astype(np.float32),
        children=children.astype(np.int64),
        leaf_start=np.concatenate(
            [t.leaf_start + leaf_base[i] for i, t in enumerate(trees)]).astype(np.int64),
        leaf_count=np.concatenate([t.leaf_count for t in trees]).astype(np.int64),
        leaf_indices=np.concatenate([t.leaf_indices for t in trees]).astype(np.int64),
        roots=node_base[:-1].astype(np.int64),
        neighbors=np.ascontiguousarray(index.graph.neighbors, dtype=np.int64),
    )
    _kernel_cache[index] = data
    return data


def _as_count_patches(Y, d):
    Y = np.asarray(Y)
    if Y.dtype.kind == "f" and np.any(Y != np.round(Y)):
        raise ValueError("count patches must hold integers")
    Y = Y.astype(np.float64)
    if Y.ndim != 2 or Y.shape[1] != d:
        raise ValueError(f"expected count patches of length {d}, got shape {Y.shape}")
    if np.any(Y < 0):
        raise ValueError("counts must be nonnegative")
    return np.ascontiguousarray(Y)


def denoise_patches(Y, index: DenoiseIndex, params: DenoiseParams | None = None,
                    workers: int | None = None):
    """Denoise a stack of count patches, one per row.

    Patches are independent, so the result does not depend on
    ``workers`` (default: all available threads).

    Returns
    -------
    estimates : ndarray, shape (n, d)
    processed : ndarray of int64
        Number of clusters evaluated for each patch.
    pops : ndarray of int64
        Number of priority-queue pops for each patch.
    fallback : ndarray of bool
        True where no visited cluster could explain the counts and the
        counts themselves were returned.
    """
    params = params or DenoiseParams()
    Y = _as_count_patches(Y, index.d)
    n = len(Y)
    workers = workers or numba.config.NUMBA_NUM_THREADS
    workers = max(1, min(workers, numba.config.NUMBA_NUM_THREADS))
    out = np.empty((n, index.d))
    processed = np.zeros(n, dtype=np.int64)
    pops = np.zeros(n, dtype=np.int64)
    flags = np.zeros(n, dtype=np.int64)
    if n == 0:
        return out, processed, pops, flags.astype(bool)
    previous = numba.get_num_threads()
    numba.set_num_threads(workers)
    try:
        _search.query_batch(
            Y, *_kernel_data(index).args(),
            params.window, float(params.epsilon), bool(params.exhaustive),
            min(n, 4 * workers), out, processed, pops, flags)
    finally:
        numba.set_num_threads(previous)
    return out, processed, pops, flags == _search.FALLBACK


def denoise_patch(y, index: DenoiseIndex, params: DenoiseParams | None = None,
                  full_output: bool = False):
    """MMSE estimate of the clean patch behind count patch ``y``.

    Starts from the clusters in the k-d tree leaves that hold ``y / mean(y)``
    and expands through the K-NN graph, most likely cluster first, until
    the weight sum stops changing. An all-zero patch maps to zeros.

    With ``full_output`` also returns a dict with ``processed``, ``pops``
    and ``fallback``.
    """
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("a count patch must be a 1-D vector")
    est, processed, pops, fallback = denoise_patches(y[None, :], index, params, workers=1)
    if full_output:
        return est[0], {"processed": int(processed[0]), "pops": int(pops[0]),
                        "fallback": bool(fallback[0])}
    return est[0]


def _posterior_mean(y, points, log_counts, mean_scale):
    y = np.asarray(y)
    points = np.asarray(points)
    if points.ndim != 2 or y.shape != (points.shape[1],):
        raise ValueError(f"count patch of shape {y.shape} does not match points {points.shape}")
    if not mean_scale > 0:
        raise ValueError("mean_scale must be positive")
    x = mean_scale * points.astype(np.float64)
    loglik = poisson_log_pmf_array(y[None, :], x).sum(axis=1)
    log_w = log_counts + loglik
    top = log_w.max()
    if top == -np.inf:
        raise DegenerateWeightsError("all candidates have zero likelihood")
    w = np.exp(log_w - top)
    return (w @ x) / w.sum()


def brute_force_mmse_clusters(y, model, mean_scale: float) -> np.ndarray:
    """Cluster-weighted posterior mean summed over every cluster.

    Each centroid ``c_j`` is scaled to ``mean_scale * c_j`` and weighted by
    ``n_j`` times the Poisson likelihood of ``y`` under it.
    """
    counts = np.asarray(model.counts, dtype=np.float64)
    return _posterior_mean(y, model.centroids, np.log(counts), mean_scale)


def brute_force_mmse_corpus(y, corpus, mean_scale: float) -> np.ndarray:
    """Posterior mean over every corpus patch, each with unit weight."""
    patches = np.asarray(getattr(corpus, "patches", corpus))
    return _posterior_mean(y, patches, np.zeros(len(patches)), mean_scale)
