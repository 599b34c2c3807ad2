"""The persisted denoising index: clusters, k-d forest and K-NN graph.

Binary layout (all little-endian)::

    b"PMSE"  u32 version=1
    u32 side  u64 N_C  u32 K  u32 N_T  u32 L  f64 mean_intensity
    f32[N_C * d]   centroids, row-major
    u64[N_C]       cluster counts
    u32[N_C * K]   neighbor lists
    N_T times:
        u64 node_count, then per node (preorder):
            u8 is_leaf
            internal: u32 split_dim, f32 threshold, u64 left, u64 right
            leaf:     u32 count, u32[count] centroid indices

Child references are node positions within the same tree.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..imageio import atomic_output
from .corpus import PatchCorpus, normalize_corpus
from .kdforest import KdForest, KdTree, build_kd_forest
from .kmeans import ClusterModel, kmeans_cluster
from .knngraph import KnnGraph, build_knn_graph

__all__ = [
    "DenoiseIndex",
    "build_index",
    "save_index",
    "load_index",
    "IndexFormatError",
    "NotAnIndexFileError",
    "IndexVersionError",
    "TruncatedIndexError",
    "InconsistentIndexError",
    "MAGIC",
    "VERSION",
]

MAGIC = b"PMSE"
VERSION = 1

_HEADER = struct.Struct("<4sIIQIIId")
_INTERNAL = struct.Struct("<IfQQ")


class IndexFormatError(ValueError):
    """Base class for unreadable index files."""


class NotAnIndexFileError(IndexFormatError):
    pass


class IndexVersionError(IndexFormatError):
    pass


class TruncatedIndexError(IndexFormatError):
    pass


class InconsistentIndexError(IndexFormatError):
    pass


@dataclass(frozen=True, eq=False)
class DenoiseIndex:
    """Everything the online denoiser needs, with its build parameters.

    Centroids are held in float32, the precision they are stored in.
    """

    side: int
    mean_intensity: float
    model: ClusterModel
    forest: KdForest
    graph: KnnGraph

    def __post_init__(self):
        n, d = self.model.centroids.shape
        if d != self.side * self.side:
            raise ValueError(f"centroid length {d} does not match patch side {self.side}")
        if self.model.centroids.dtype != np.float32:
            object.__setattr__(self, "model", _as_float32(self.model))
        if self.graph.neighbors.shape[0] != n:
            raise ValueError("K-NN graph and cluster model disagree on N_C")
        if not self.k < n:
            raise ValueError(f"K = {self.k} must be smaller than N_C = {n}")
        if self.forest.n_dims != d:
            raise ValueError("k-d forest and cluster model disagree on d")

    @property
    def d(self) -> int:
        return self.side * self.side

    @property
    def n_clusters(self) -> int:
        return self.model.n_clusters

    @property
    def k(self) -> int:
        return self.graph.k

    @property
    def n_trees(self) -> int:
        return self.forest.n_trees

    @property
    def leaf_size(self) -> int:
        return self.forest.leaf_size


def _as_float32(model: ClusterModel) -> ClusterModel:
    # labels and WCSS history describe the training run and are kept
    return ClusterModel(model.centroids.astype(np.float32), model.counts,
                        labels=model.labels, wcss_history=model.wcss_history)


def build_index(corpus: PatchCorpus, n_clusters: int, k: int | None = None,
                n_trees: int = 64, leaf_size: int = 32, seed: int = 0,
                max_iters: int = 30, tol: float = 1e-3) -> DenoiseIndex:
    """Run the whole offline step on ``corpus``.

    The corpus is normalized first unless it already carries a mean
    intensity. ``k`` defaults to ``2 d``, capped at ``N_C - 1``.
    """
    if corpus.mean_intensity == 0:
        corpus = normalize_corpus(corpus)
    model = kmeans_cluster(corpus, n_clusters, max_iters=max_iters, seed=seed, tol=tol)
    model = _as_float32(model)
    if k is None:
        k = min(2 * corpus.d, n_clusters - 1)
    forest = build_kd_forest(model, n_trees, leaf_size, seed)
    graph = build_knn_graph(model, k)
    return DenoiseIndex(corpus.side, corpus.mean_intensity, model, forest, graph)


def save_index(index: DenoiseIndex, path) -> None:
    """Write ``index`` to ``path`` atomically."""
    n, d = index.model.centroids.shape
    with atomic_output(path) as f:
        f.write(_HEADER.pack(MAGIC, VERSION, index.side, n, index.k,
                             index.n_trees, index.leaf_size, index.mean_intensity))
        f.write(index.model.centroids.astype("<f4").tobytes())
        f.write(index.model.counts.astype("<u8").tobytes())
        f.write(index.graph.neighbors.astype("<u4").tobytes())
        for tree in index.forest.trees:
            f.write(_tree_bytes(tree))


def _tree_bytes(tree: KdTree) -> bytes:
    parts = [struct.pack("<Q", tree.n_nodes)]
    for i in range(tree.n_nodes):
        dim = int(tree.split_dim[i])
        if dim < 0:
            start, count = tree.leaf_start[i], tree.leaf_count[i]
            parts.append(struct.pack("<BI", 1, count))
            parts.append(tree.leaf_indices[start:start + count].astype("<u4").tobytes())
        else:
            left, right = tree.children[i]
            parts.append(b"\x00" + _INTERNAL.pack(dim, tree.threshold[i], left, right))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedIndexError("unexpected end of file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)


_U8, _U32, _U64 = struct.Struct("<B"), struct.Struct("<I"), struct.Struct("<Q")


def _read_tree(r: _Reader, n_clusters: int, d: int) -> KdTree:
    (n_nodes,) = r.unpack(_U64)
    if n_nodes < 1 or n_nodes > 2 * n_clusters:
        raise InconsistentIndexError(f"implausible tree node count {n_nodes}")
    split_dim = np.full(n_nodes, -1, dtype=np.int32)
    threshold = np.zeros(n_nodes, dtype=np.float32)
    children = np.full((n_nodes, 2), -1, dtype=np.int64)
    leaf_start = np.zeros(n_nodes, dtype=np.int64)
    leaf_count = np.zeros(n_nodes, dtype=np.int64)
    leaves = []
    filled = 0
    for i in range(n_nodes):
        (is_leaf,) = r.unpack(_U8)
        if is_leaf == 1:
            (count,) = r.unpack(_U32)
            idx = r.array("<u4", count)
            leaf_start[i] = filled
            leaf_count[i] = count
            leaves.append(idx)
            filled += count
        elif is_leaf == 0:
            dim, thr, left, right = r.unpack(_INTERNAL)
            if dim >= d or not (i < left < n_nodes and i < right < n_nodes):
                raise InconsistentIndexError(f"bad internal node {i}")
            split_dim[i] = dim
            threshold[i] = thr
            children[i] = left, right
        else:
            raise InconsistentIndexError(f"bad node flag {is_leaf}")
    leaf_indices = (np.concatenate(leaves) if leaves
                    else np.zeros(0, dtype=np.uint32)).astype(np.int64)
    if (len(leaf_indices) != n_clusters
            or np.any(np.bincount(leaf_indices, minlength=n_clusters) != 1)):
        raise InconsistentIndexError("tree leaves do not partition the clusters")
    return KdTree(split_dim, threshold, children, leaf_start, leaf_count, leaf_indices)


def load_index(path) -> DenoiseIndex:
    """Read an index written by :func:`save_index`.

    Raises
    ------
    NotAnIndexFileError
        The file does not start with the index magic bytes.
    IndexVersionError
        The format version is not supported.
    TruncatedIndexError
        The file ends before the declared payload does.
    InconsistentIndexError
        Sizes, counts or references contradict each other.
    """
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise NotAnIndexFileError("not an index file")
    r = _Reader(buf)
    if len(buf) < 8:
        raise TruncatedIndexError("unexpected end of file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise IndexVersionError(f"unsupported index version {version}")
    _, _, side, n, k, n_trees, leaf_size, mean = r.unpack(_HEADER)
    d = side * side
    if side < 1 or n < 1 or not 0 <= k < n or n_trees < 1 or leaf_size < 1:
        raise InconsistentIndexError("inconsistent index parameters")
    centroids = r.array("<f4", n * d).reshape(n, d).astype(np.float32)
    counts = r.array("<u8", n).astype(np.int64)
    neighbors = r.array("<u4", n * k).reshape(n, k).astype(np.int64)
    if np.any(counts < 1):
        raise InconsistentIndexError("empty cluster in index")
    if np.any(neighbors >= n):
        raise InconsistentIndexError("neighbor index out of range")
    trees = tuple(_read_tree(r, n, d) for _ in range(n_trees))
    if r.pos != len(buf):
        raise InconsistentIndexError("trailing bytes after the last tree")
    return DenoiseIndex(
        side, mean, ClusterModel(centroids, counts),
        KdForest(trees, d, leaf_size, seed=None), KnnGraph(neighbors))
