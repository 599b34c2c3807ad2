"""
Poisson likelihood, PSNR, sliding-window patch handling and noise simulation.

Images are plain 2-D numpy arrays indexed ``[row, col]``: an *intensity
image* holds nonnegative finite reals, a *count image* holds nonnegative
integers. Patches are flattened row-major into 1-D vectors of length
``side**2``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import gammaln, xlogy

__all__ = [
    "PatchPosition",
    "poisson_log_pmf",
    "poisson_log_pmf_array",
    "patch_log_likelihood",
    "psnr",
    "extract_patches",
    "aggregate_patches",
    "add_poisson_noise",
    "scale_to_peak",
    "as_intensity_image",
    "as_count_image",
]


class PatchPosition(NamedTuple):
    """Top-left pixel of a patch inside its image."""

    row: int
    col: int


def as_intensity_image(image) -> np.ndarray:
    """Validate and return ``image`` as a 2-D float64 array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("intensity image must be finite and nonnegative")
    return arr


def as_count_image(image) -> np.ndarray:
    """Validate and return ``image`` as a 2-D int64 array of counts."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("count image must hold integer values")
    elif arr.dtype.kind not in "iub":
        raise ValueError(f"unsupported count dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError("count image must be nonnegative")
    return arr


def poisson_log_pmf(y: int, x: float) -> float:
    """Log-probability of observing ``y`` photons when the true intensity is ``x``.

    Follows the degenerate conventions at ``x == 0``: probability one for
    ``y == 0`` and zero otherwise, so the result is ``0.0`` or ``-inf``.

    >>> poisson_log_pmf(0, 0.0)
    0.0
    >>> poisson_log_pmf(3, 0.0)
    -inf
    """
    if y < 0 or int(y) != y:
        raise ValueError(f"count must be a nonnegative integer, got {y!r}")
    if not (x >= 0) or math.isinf(x):
        raise ValueError(f"intensity must be finite and nonnegative, got {x!r}")
    y = int(y)
    if x == 0:
        return 0.0 if y == 0 else -math.inf
    return y * math.log(x) - x - math.lgamma(y + 1)


def poisson_log_pmf_array(y, x) -> np.ndarray:
    """Elementwise :func:`poisson_log_pmf` over broadcastable arrays."""
    y = np.asarray(y)
    x = np.asarray(x, dtype=np.float64)
    if np.any(y < 0) or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("counts and intensities must be nonnegative and finite")
    # xlogy gives 0 for y == 0 and -inf for x == 0 < y
    return xlogy(y, x) - x - gammaln(y + 1.0)


def patch_log_likelihood(y, x) -> float:
    """Log-likelihood of count patch ``y`` given intensity patch ``x``.

    The sum of per-pixel :func:`poisson_log_pmf` terms; ``-inf`` whenever a
    pixel with zero intensity carries a positive count.
    """
    y = np.asarray(y)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError(f"patch shapes differ: {y.shape} vs {x.shape}")
    terms = poisson_log_pmf_array(y, x)
    if np.any(np.isneginf(terms)):
        return -math.inf
    return float(terms.sum())


def psnr(reference, estimate, peak: float) -> float:
    """Peak signal-to-noise ratio in dB, ``10 log10(peak**2 / MSE)``.

    Returns ``inf`` for identical images.
    """
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError(
            f"image shapes differ: {reference.shape} vs {estimate.shape}")
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak!r}")
    mse = np.mean((reference - estimate) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def extract_patches(image, side: int) -> tuple[np.ndarray, np.ndarray]:
    """All overlapping ``side x side`` patches of ``image`` at stride 1.

    Returns
    -------
    patches : ndarray, shape (n, side**2)
        Row-major flattened copies, ordered by top-left position
        (row-major over positions).
    positions : ndarray of int64, shape (n, 2)
        ``(row, col)`` of each patch's top-left pixel.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if side < 1:
        raise ValueError("patch side must be at least 1")
    height, width = image.shape
    if height < side or width < side:
        raise ValueError(
            f"image smaller than patch: {width}x{height} image, patch side {side}")
    windows = sliding_window_view(image, (side, side))
    n_rows, n_cols = windows.shape[:2]
    patches = windows.reshape(n_rows * n_cols, side * side).copy()
    rr, cc = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    positions = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.int64)
    return patches, positions


def aggregate_patches(patches, positions, width: int, height: int) -> np.ndarray:
    """Average overlapping patch estimates back into a ``height x width`` image.

    Sums are accumulated in the order the patches are given. A pixel whose
    estimates all agree is returned as that exact value, so extracting and
    re-aggregating an image is lossless.
    """
    patches = np.asarray(patches, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if patches.ndim != 2 or len(patches) != len(positions):
        raise ValueError("need one position per patch")
    side = math.isqrt(patches.shape[1])
    if side * side != patches.shape[1] or side == 0:
        raise ValueError(f"patch length {patches.shape[1]} is not a square")
    rows, cols = positions[:, 0], positions[:, 1]
    if (np.any(rows < 0) or np.any(cols < 0)
            or np.any(rows + side > height) or np.any(cols + side > width)):
        raise ValueError("patch position out of bounds")

    total = np.zeros(height * width)
    count = np.zeros(height * width, dtype=np.int64)
    lo = np.full(height * width, np.inf)
    hi = np.full(height * width, -np.inf)
    base = rows * width + cols
    for k in range(side * side):
        di, dj = divmod(k, side)
        flat = base + di * width + dj
        vals = patches[:, k]
        np.add.at(total, flat, vals)
        np.add.at(count, flat, 1)
        np.minimum.at(lo, flat, vals)
        np.maximum.at(hi, flat, vals)
    if np.any(count == 0):
        raise ValueError("some pixels are not covered by any patch")
    out = total / count
    same = lo == hi
    out[same] = lo[same]
    return out.reshape(height, width)


def add_poisson_noise(image, peak: float, seed: int) -> np.ndarray:
    """Scale ``image`` so its maximum equals ``peak`` and draw Poisson counts.

    Uses numpy's ``Generator.poisson``, which samples the exact
    distribution (inversion for small means, transformed rejection for
    large ones). Identical ``(image, peak, seed)`` give identical counts.
    """
    scaled = scale_to_peak(image, peak)
    rng = np.random.default_rng(seed)
    return rng.poisson(scaled).astype(np.int64)


def scale_to_peak(image, peak: float) -> np.ndarray:
    """Rescale ``image`` linearly so that its maximum equals ``peak``."""
    image = as_intensity_image(image)
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak!r}")
    top = image.max()
    if top <= 0:
        raise ValueError("cannot scale an all-zero image to a peak")
    return image * (peak / top)
