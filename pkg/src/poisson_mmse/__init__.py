"""Patch-based Poisson denoising with a clustered natural-patch prior."""

from .core import (
    PatchPosition,
    add_poisson_noise,
    aggregate_patches,
    extract_patches,
    patch_log_likelihood,
    poisson_log_pmf,
    psnr,
    scale_to_peak,
)
from .denoiser import (
    DegenerateWeightsError,
    DenoiseParams,
    brute_force_mmse_clusters,
    brute_force_mmse_corpus,
    denoise_patch,
    denoise_patches,
)
from .indexer import (
    ClusterModel,
    DenoiseIndex,
    PatchCorpus,
    build_index,
    build_kd_forest,
    build_knn_graph,
    ingest_corpus,
    kd_leaf_lookup,
    kmeans_cluster,
    load_index,
    normalize_corpus,
    save_index,
)

__version__ = "0.1.0"
