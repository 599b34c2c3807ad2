"""Clean-patch corpus: ingestion from images and intensity normalization."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..core import as_intensity_image
from ..imageio import read_image

__all__ = ["PatchCorpus", "ingest_corpus", "normalize_corpus"]


@dataclass(frozen=True, eq=False)
class PatchCorpus:
    """A bag of noise-free patches, one flattened patch per row.

    ``mean_intensity`` is the grand mean the patches were divided by, or
    0 while the corpus is still in raw intensity units.
    """

    side: int
    patches: np.ndarray
    mean_intensity: float = 0.0

    def __post_init__(self):
        patches = np.asarray(self.patches, dtype=np.float64)
        if patches.ndim != 2 or patches.shape[1] != self.side * self.side:
            raise ValueError(
                f"patches must have shape (n, {self.side * self.side}), got {patches.shape}")
        if len(patches) < 1:
            raise ValueError("a corpus needs at least one patch")
        object.__setattr__(self, "patches", patches)

    @property
    def d(self) -> int:
        return self.side * self.side

    def __len__(self) -> int:
        return len(self.patches)


def _load(source) -> np.ndarray:
    if isinstance(source, (str, os.PathLike)):
        source = read_image(source)
    return as_intensity_image(source)


def ingest_corpus(sources, side: int, cap: int | None = None, seed: int = 0) -> PatchCorpus:
    """Collect every overlapping ``side x side`` patch from ``sources``.

    ``sources`` may mix file paths (PGM/PFM) and 2-D arrays. Images smaller
    than one patch are skipped. With ``cap``, a uniform random subset of
    ``cap`` patches (without replacement, drawn with ``seed``) is kept, in
    the original scan order; the full patch set is never materialized.
    """
    images = [img for img in map(_load, sources)
              if img.shape[0] >= side and img.shape[1] >= side]
    if not images:
        raise ValueError(f"no image is at least {side}x{side}")
    grid = [(h - side + 1, w - side + 1) for h, w in (img.shape for img in images)]
    sizes = np.array([r * c for r, c in grid], dtype=np.int64)
    total = int(sizes.sum())

    if cap is None or cap >= total:
        picks = np.arange(total, dtype=np.int64)
    else:
        if cap < 1:
            raise ValueError("cap must be positive")
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(total, size=cap, replace=False))

    starts = np.concatenate([[0], np.cumsum(sizes)])
    offs = np.arange(side)
    chunks = []
    for i, img in enumerate(images):
        local = picks[(picks >= starts[i]) & (picks < starts[i + 1])] - starts[i]
        if len(local) == 0:
            continue
        rows, cols = np.divmod(local, grid[i][1])
        rr = rows[:, None, None] + offs[None, :, None]
        cc = cols[:, None, None] + offs[None, None, :]
        chunks.append(img[rr, cc].reshape(len(local), side * side))
    return PatchCorpus(side, np.concatenate(chunks))


def normalize_corpus(corpus: PatchCorpus) -> PatchCorpus:
    """Divide every patch by the grand mean of all corpus intensities."""
    mean = float(np.mean(corpus.patches))
    if not mean > 0:
        raise ValueError("cannot normalize an all-zero corpus")
    return PatchCorpus(corpus.side, corpus.patches / mean, mean)
