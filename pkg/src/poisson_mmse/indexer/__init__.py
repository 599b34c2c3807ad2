"""Offline step: corpus, clustering, search structures and persistence."""

from .corpus import PatchCorpus, ingest_corpus, normalize_corpus
from .index import (
    DenoiseIndex,
    IndexFormatError,
    IndexVersionError,
    InconsistentIndexError,
    NotAnIndexFileError,
    TruncatedIndexError,
    build_index,
    load_index,
    save_index,
)
from .kdforest import KdForest, KdTree, build_kd_forest, kd_leaf_lookup
from .kmeans import ClusterModel, assign_nearest, kmeans_cluster, kmeans_plusplus
from .knngraph import KnnGraph, build_knn_graph

__all__ = [
    "PatchCorpus",
    "ingest_corpus",
    "normalize_corpus",
    "ClusterModel",
    "kmeans_cluster",
    "kmeans_plusplus",
    "assign_nearest",
    "KdTree",
    "KdForest",
    "build_kd_forest",
    "kd_leaf_lookup",
    "KnnGraph",
    "build_knn_graph",
    "DenoiseIndex",
    "build_index",
    "save_index",
    "load_index",
    "IndexFormatError",
    "NotAnIndexFileError",
    "IndexVersionError",
    "TruncatedIndexError",
    "InconsistentIndexError",
]
