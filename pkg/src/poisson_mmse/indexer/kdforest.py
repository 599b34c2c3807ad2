"""Randomized k-d trees over cluster centroids.

Each node splits on a dimension drawn uniformly from the few dimensions of
largest variance among its centroids, at the median value. Different
random draws give every tree its own partition of the centroid set.
Trees are stored flat, nodes in preorder with the root at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["KdTree", "KdForest", "build_kd_forest", "kd_leaf_lookup", "TOP_VARIANCE_DIMS"]

TOP_VARIANCE_DIMS = 5


@dataclass(frozen=True, eq=False)
class KdTree:
    """One tree in flat form.

    ``split_dim[i] == -1`` marks node ``i`` as a leaf whose centroid
    indices are ``leaf_indices[leaf_start[i]:leaf_start[i] + leaf_count[i]]``.
    Internal nodes send ``query[split_dim] <= threshold`` to
    ``children[i, 0]`` and everything else to ``children[i, 1]``.
    """

    split_dim: np.ndarray      # int32 (n_nodes,)
    threshold: np.ndarray      # float32 (n_nodes,)
    children: np.ndarray       # int64 (n_nodes, 2)
    leaf_start: np.ndarray     # int64 (n_nodes,)
    leaf_count: np.ndarray     # int64 (n_nodes,)
    leaf_indices: np.ndarray   # int64 (n_centroids,)

    @property
    def n_nodes(self) -> int:
        return len(self.split_dim)

    def leaves(self) -> list[np.ndarray]:
        return [self.leaf_indices[s:s + c] for s, c, dim in
                zip(self.leaf_start, self.leaf_count, self.split_dim) if dim < 0]


@dataclass(frozen=True, eq=False)
class KdForest:
    trees: tuple[KdTree, ...]
    n_dims: int
    leaf_size: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


class _TreeBuilder:
    def __init__(self, points, leaf_size, rng):
        self.points = points
        self.leaf_size = leaf_size
        self.rng = rng
        self.dim, self.thr, self.children = [], [], []
        self.leaf_start, self.leaf_count = [], []
        self.leaf_indices = []
        self.n_leaf_indices = 0

    def _new_node(self):
        self.dim.append(-1)
        self.thr.append(0.0)
        self.children.append((-1, -1))
        self.leaf_start.append(0)
        self.leaf_count.append(0)
        return len(self.dim) - 1

    def _leaf(self, node, idx):
        self.leaf_start[node] = self.n_leaf_indices
        self.leaf_count[node] = len(idx)
        self.leaf_indices.append(idx)
        self.n_leaf_indices += len(idx)

    def build(self, idx):
        node = self._new_node()
        if len(idx) <= self.leaf_size:
            self._leaf(node, idx)
            return node
        sub = self.points[idx]
        var = sub.astype(np.float64).var(axis=0)
        order = np.argsort(-var, kind="stable")
        top = order[:TOP_VARIANCE_DIMS]
        top = top[var[top] > 0]
        if len(top) == 0:
            # identical centroids cannot be separated by any split
            self._leaf(node, idx)
            return node
        dim = int(top[self.rng.integers(len(top))])
        vals = sub[:, dim]
        thr = np.sort(vals)[(len(vals) - 1) // 2]
        go_left = vals <= thr
        if go_left.all():
            thr = vals[vals < vals.max()].max()
            go_left = vals <= thr
        self.dim[node] = dim
        self.thr[node] = thr
        left = self.build(idx[go_left])
        right = self.build(idx[~go_left])
        self.children[node] = (left, right)
        return node

    def finish(self) -> KdTree:
        return KdTree(
            split_dim=np.array(self.dim, dtype=np.int32),
            threshold=np.array(self.thr, dtype=np.float32),
            children=np.array(self.children, dtype=np.int64).reshape(-1, 2),
            leaf_start=np.array(self.leaf_start, dtype=np.int64),
            leaf_count=np.array(self.leaf_count, dtype=np.int64),
            leaf_indices=np.concatenate(self.leaf_indices).astype(np.int64),
        )


def build_kd_forest(model, n_trees: int = 64, leaf_size: int = 32,
                    seed: int = 0) -> KdForest:
    """Build ``n_trees`` randomized k-d trees over ``model``'s centroids.

    Centroids are compared in float32, the precision they are stored in, so
    that split thresholds are exactly representable.

    Examples
    --------
    >>> from poisson_mmse.indexer import ClusterModel
    >>> m = ClusterModel(np.arange(4.0).reshape(4, 1), np.ones(4))
    >>> [leaf.tolist() for leaf in build_kd_forest(m, 1, 2).trees[0].leaves()]
    [[0, 1], [2, 3]]
    """
    points = np.asarray(getattr(model, "centroids", model)).astype(np.float32)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("cannot build a k-d forest over an empty model")
    if n_trees < 1 or leaf_size < 1:
        raise ValueError("n_trees and leaf_size must be positive")
    rng = np.random.default_rng(seed)
    all_idx = np.arange(len(points), dtype=np.int64)
    trees = []
    for _ in range(n_trees):
        builder = _TreeBuilder(points, leaf_size, rng)
        builder.build(all_idx)
        trees.append(builder.finish())
    return KdForest(tuple(trees), points.shape[1], leaf_size, seed)


def kd_leaf_lookup(forest: KdForest, tree_index: int, query) -> np.ndarray:
    """Centroid indices stored in the leaf of one tree that ``query`` falls in."""
    tree = forest.trees[tree_index]
    query = np.asarray(query, dtype=np.float64).ravel()
    if len(query) != forest.n_dims:
        raise ValueError(f"query has {len(query)} elements, expected {forest.n_dims}")
    node = 0
    while tree.split_dim[node] >= 0:
        dim = tree.split_dim[node]
        node = tree.children[node, 0 if query[dim] <= tree.threshold[node] else 1]
    start = tree.leaf_start[node]
    return tree.leaf_indices[start:start + tree.leaf_count[node]]
