"""Exact K-nearest-neighbor graph over cluster centroids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["KnnGraph", "build_knn_graph"]

_CHUNK = 512


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Row ``j`` of ``neighbors`` lists the K centroids nearest to centroid j.

    Rows are sorted by ascending Euclidean distance, ties by lower index,
    and never contain ``j`` itself.
    """

    neighbors: np.ndarray  # int64 (n_centroids, K)

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def build_knn_graph(model, k: int) -> KnnGraph:
    """Brute-force K-NN graph of ``model``'s centroids.

    Candidates are screened blockwise with the ``|a|^2 - 2ab + |b|^2``
    expansion, then re-ranked on directly computed squared distances so
    that the ordering does not depend on cancellation error.
    """
    C = np.asarray(getattr(model, "centroids", model), dtype=np.float64)
    n = len(C)
    if not 0 <= k < n:
        raise ValueError(f"need 0 <= K < N_C = {n}, got K = {k}")
    if k == 0:
        return KnnGraph(np.zeros((n, 0), dtype=np.int64))
    sq = np.einsum("ij,ij->i", C, C)
    # generous bound on the expansion's rounding error
    slack = 1e-10 * (sq + sq.max()) + 1e-300
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        d2 = sq[start:stop, None] - 2.0 * (C[start:stop] @ C.T) + sq[None, :]
        rows = np.arange(stop - start)
        d2[rows, rows + start] = np.inf
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        for r in rows:
            i = start + r
            cand = np.flatnonzero(d2[r] <= kth[r] + 2.0 * slack[i])
            cand = cand[cand != i]
            diff = C[cand] - C[i]
            exact = np.einsum("ij,ij->i", diff, diff)
            out[i] = cand[np.lexsort((cand, exact))[:k]]
    return KnnGraph(out)
