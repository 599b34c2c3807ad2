"""Compiled best-first MMSE search over cluster centroids.

One query keeps a numerator vector and a scalar denominator, both scaled
by ``exp(-log_scale)`` where ``log_scale`` is the largest log-weight seen
so far, so that likelihoods of 64- or 196-pixel patches never underflow
the sums to zero.
"""

from __future__ import annotations

import math

import numba
import numpy as np

# the bundled TBB is often too old for numba; prefer OpenMP quietly
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

FALLBACK = 1


@numba.njit(cache=True, inline="always")
def _before(key_a, id_a, key_b, id_b):
    return key_a > key_b or (key_a == key_b and id_a < id_b)


@numba.njit(cache=True)
def _heap_push(keys, ids, size, key, ident):
    i = size
    keys[i] = key
    ids[i] = ident
    while i > 0:
        parent = (i - 1) // 2
        if _before(keys[i], ids[i], keys[parent], ids[parent]):
            keys[i], keys[parent] = keys[parent], keys[i]
            ids[i], ids[parent] = ids[parent], ids[i]
            i = parent
        else:
            break
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, ids, size):
    top = ids[0]
    size -= 1
    keys[0] = keys[size]
    ids[0] = ids[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        best = left
        right = left + 1
        if right < size and _before(keys[right], ids[right], keys[left], ids[left]):
            best = right
        if _before(keys[best], ids[best], keys[i], ids[i]):
            keys[i], keys[best] = keys[best], keys[i]
            ids[i], ids[best] = ids[best], ids[i]
            i = best
        else:
            break
    return top, size


@numba.njit(cache=True)
def _process(batch, n_batch, nz_idx, nz_val, nnz, const, mu,
             logc, csum, log_counts, centroids, stamp, epoch,
             heap_keys, heap_ids, heap_size, push, s, w, log_scale, processed):
    """Fold every not-yet-processed cluster of ``batch`` into ``(s, w)``."""
    d = s.shape[0]
    for m in range(n_batch):
        j = batch[m]
        if stamp[j] == epoch:
            continue
        stamp[j] = epoch
        processed += 1
        acc = 0.0
        for t in range(nnz):
            acc += nz_val[t] * logc[j, nz_idx[t]]
        ll = acc + const - mu * csum[j]
        if push:
            heap_size = _heap_push(heap_keys, heap_ids, heap_size, ll, j)
        lw = log_counts[j] + ll
        if lw == -np.inf:
            continue
        if lw > log_scale:
            f = math.exp(log_scale - lw)
            w = w * f + 1.0
            for i in range(d):
                s[i] = s[i] * f + centroids[j, i]
            log_scale = lw
        else:
            e = math.exp(lw - log_scale)
            w += e
            for i in range(d):
                s[i] += e * centroids[j, i]
    return heap_size, w, log_scale, processed


@numba.njit(cache=True)
def _log_w(w, log_scale):
    return math.log(w) + log_scale if w > 0.0 else -np.inf


@numba.njit(cache=True)
def query_patch(y, logc, csum, log_counts, centroids,
                split_dim, threshold, children, leaf_start, leaf_count,
                leaf_indices, roots, neighbors,
                window, epsilon, exhaustive,
                stamp, epoch, heap_keys, heap_ids, history, nz_idx, nz_val, out):
    """Denoise one count patch ``y`` into ``out``.

    ``stamp[j] == epoch`` marks cluster j as processed for this query, so
    callers must pass a fresh epoch per query. Returns
    ``(n_processed, n_pops, flags)``.
    """
    d = y.shape[0]
    n_clusters = centroids.shape[0]

    total = 0.0
    nnz = 0
    lgamma_sum = 0.0
    for i in range(d):
        if y[i] > 0:
            nz_idx[nnz] = i
            nz_val[nnz] = y[i]
            nnz += 1
            total += y[i]
            lgamma_sum += math.lgamma(y[i] + 1.0)
    if total == 0.0:
        for i in range(d):
            out[i] = 0.0
        return 0, 0, 0
    mu = total / d
    # log-likelihood of cluster j is  sum_i y_i log(c_ji) + const - mu * csum_j
    const = total * math.log(mu) - lgamma_sum

    s = np.zeros(d)
    w = 0.0
    log_scale = -np.inf
    heap_size = 0
    processed = 0

    for t in range(roots.shape[0]):
        node = roots[t]
        while split_dim[node] >= 0:
            if y[split_dim[node]] / mu <= threshold[node]:
                node = children[node, 0]
            else:
                node = children[node, 1]
        start = leaf_start[node]
        heap_size, w, log_scale, processed = _process(
            leaf_indices[start:start + leaf_count[node]], leaf_count[node],
            nz_idx, nz_val, nnz, const, mu, logc, csum, log_counts, centroids,
            stamp, epoch, heap_keys, heap_ids, heap_size, True,
            s, w, log_scale, processed)

    ring = window + 1
    history[0] = _log_w(w, log_scale)
    hist_len = 1
    pops = 0
    k = neighbors.shape[1]
    while heap_size > 0:
        if not exhaustive and hist_len > window:
            newest = history[(hist_len - 1) % ring]
            oldest = history[(hist_len - 1 - window) % ring]
            if newest > -np.inf and 1.0 - math.exp(oldest - newest) < epsilon:
                break
        j_star, heap_size = _heap_pop(heap_keys, heap_ids, heap_size)
        pops += 1
        heap_size, w, log_scale, processed = _process(
            neighbors[j_star], k,
            nz_idx, nz_val, nnz, const, mu, logc, csum, log_counts, centroids,
            stamp, epoch, heap_keys, heap_ids, heap_size, True,
            s, w, log_scale, processed)
        history[hist_len % ring] = _log_w(w, log_scale)
        hist_len += 1

    if exhaustive and processed < n_clusters:
        everything = np.arange(n_clusters)
        heap_size, w, log_scale, processed = _process(
            everything, n_clusters,
            nz_idx, nz_val, nnz, const, mu, logc, csum, log_counts, centroids,
            stamp, epoch, heap_keys, heap_ids, heap_size, False,
            s, w, log_scale, processed)

    if w == 0.0:
        for i in range(d):
            out[i] = y[i]
        return processed, pops, FALLBACK
    scale = mu / w
    for i in range(d):
        out[i] = s[i] * scale
    return processed, pops, 0


@numba.njit(cache=True, parallel=True)
def query_batch(Y, logc, csum, log_counts, centroids,
                split_dim, threshold, children, leaf_start, leaf_count,
                leaf_indices, roots, neighbors,
                window, epsilon, exhaustive, n_chunks,
                out, processed, pops, flags):
    n, d = Y.shape
    n_clusters = centroids.shape[0]
    per_chunk = (n + n_chunks - 1) // n_chunks
    for c in numba.prange(n_chunks):
        stamp = np.zeros(n_clusters, dtype=np.int64)
        heap_keys = np.empty(n_clusters)
        heap_ids = np.empty(n_clusters, dtype=np.int64)
        history = np.empty(window + 1)
        nz_idx = np.empty(d, dtype=np.int64)
        nz_val = np.empty(d)
        y = np.empty(d)
        lo = c * per_chunk
        hi = min(n, lo + per_chunk)
        epoch = 0
        for p in range(lo, hi):
            epoch += 1
            for i in range(d):
                y[i] = Y[p, i]
            a, b, f = query_patch(
                y, logc, csum, log_counts, centroids,
                split_dim, threshold, children, leaf_start, leaf_count,
                leaf_indices, roots, neighbors,
                window, epsilon, exhaustive,
                stamp, epoch, heap_keys, heap_ids, history, nz_idx, nz_val, out[p])
            processed[p] = a
            pops[p] = b
            flags[p] = f
