"""Whole-image denoising and the peak/realization evaluation harness."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    add_poisson_noise,
    aggregate_patches,
    as_count_image,
    extract_patches,
    psnr,
    scale_to_peak,
)
from .denoiser import DenoiseParams, denoise_patches

__all__ = [
    "denoise_image",
    "evaluate",
    "EvaluationRow",
    "EvaluationReport",
    "realization_seeds",
]

CSV_COLUMNS = ("image", "peak", "realizations", "psnr_noisy_db",
               "psnr_denoised_db", "seconds", "fallbacks")


def denoise_image(noisy, index, params: DenoiseParams | None = None,
                  workers: int | None = None, full_output: bool = False):
    """Denoise a Poisson count image patch by patch and average the overlaps.

    Every overlapping ``side x side`` window is estimated independently;
    each output pixel is the plain mean of the estimates covering it.
    Aggregation runs in fixed row-major order, so the output does not
    depend on ``workers``.

    With ``full_output`` also returns a dict holding per-patch
    ``processed`` counts and the number of ``fallbacks``.
    """
    noisy = as_count_image(noisy)
    height, width = noisy.shape
    patches, positions = extract_patches(noisy, index.side)
    est, processed, pops, fallback = denoise_patches(patches, index, params, workers)
    image = aggregate_patches(est, positions, width, height)
    if full_output:
        return image, {"processed": processed, "pops": pops,
                       "fallbacks": int(fallback.sum())}
    return image


def realization_seeds(seed: int, peak_index: int, realizations: int) -> list[int]:
    """Independent 63-bit noise seeds for one peak of an evaluation run."""
    ss = np.random.SeedSequence(seed, spawn_key=(peak_index,))
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1))
            for s in ss.spawn(realizations)]


@dataclass
class EvaluationRow:
    image: str
    peak: float
    realizations: int
    psnr_noisy_db: float
    psnr_denoised_db: float
    seconds: float = field(compare=False)
    fallbacks: int = 0

    @property
    def gain_db(self) -> float:
        return self.psnr_denoised_db - self.psnr_noisy_db


@dataclass
class EvaluationReport:
    rows: list[EvaluationRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.image, repr(float(r.peak)), r.realizations,
                             f"{r.psnr_noisy_db:.6f}", f"{r.psnr_denoised_db:.6f}",
                             f"{r.seconds:.3f}", r.fallbacks])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'image':<16} {'peak':>6} {'n':>3} {'noisy dB':>9} "
                 f"{'denoised dB':>12} {'gain':>7} {'sec':>8} {'fb':>4}"]
        for r in self.rows:
            lines.append(
                f"{r.image:<16} {r.peak:>6g} {r.realizations:>3} {r.psnr_noisy_db:>9.3f} "
                f"{r.psnr_denoised_db:>12.3f} {r.gain_db:>7.3f} {r.seconds:>8.1f} "
                f"{r.fallbacks:>4}")
        return "\n".join(lines)

    def __str__(self) -> str:
        return self.to_table()


def evaluate(clean, index=None, peaks=(1, 2, 3, 4, 5), realizations: int = 5,
             seed: int = 0, params: DenoiseParams | None = None, *,
             name: str = "image", workers: int | None = None,
             denoiser=None) -> EvaluationReport:
    """Average PSNR of noisy and denoised images over noise realizations.

    For each peak the clean image is rescaled so its maximum equals the
    peak, ``realizations`` count images are drawn from seeds derived from
    ``seed``, and PSNR is measured against the rescaled clean image with
    the peak as ``I_max``.

    ``denoiser``, if given, replaces the index-based denoiser; it is
    called as ``denoiser(counts)`` and must return an intensity image.
    """
    if realizations < 1:
        raise ValueError("need at least one realization")
    if denoiser is None and index is None:
        raise ValueError("pass an index or a denoiser")
    report = EvaluationReport()
    for p, peak in enumerate(peaks):
        target = scale_to_peak(clean, peak)
        noisy_db, denoised_db = [], []
        fallbacks = 0
        start = time.perf_counter()
        for s in realization_seeds(seed, p, realizations):
            counts = add_poisson_noise(clean, peak, s)
            if denoiser is None:
                out, info = denoise_image(counts, index, params, workers, full_output=True)
                fallbacks += info["fallbacks"]
            else:
                out = denoiser(counts)
            noisy_db.append(psnr(target, counts, peak))
            denoised_db.append(psnr(target, out, peak))
        report.rows.append(EvaluationRow(
            image=name, peak=float(peak), realizations=realizations,
            psnr_noisy_db=_mean_db(noisy_db), psnr_denoised_db=_mean_db(denoised_db),
            seconds=time.perf_counter() - start, fallbacks=fallbacks))
    return report


def _mean_db(values) -> float:
    return math.inf if any(math.isinf(v) for v in values) else float(np.mean(values))
