"""
Photon counts and their likelihood
==================================

At low light every pixel is a Poisson count whose mean is the clean
intensity. This script draws counts at a few peak levels and looks at the
per-pixel log-likelihood that drives the denoiser.
"""

import numpy as np
from skimage import data, transform

from poisson_mmse import add_poisson_noise, patch_log_likelihood, poisson_log_pmf, psnr, scale_to_peak

# a small grayscale test image in [0, 1]
clean = transform.rescale(data.camera() / 255.0, 0.25, anti_aliasing=True)

# rescale so the brightest pixel equals the peak, then sample counts
for peak in (1, 2, 5, 20):
    counts = add_poisson_noise(clean, peak, seed=0)
    target = scale_to_peak(clean, peak)
    print(f"peak {peak:>2}: {np.mean(counts == 0):5.1%} zero pixels, "
          f"noisy PSNR {psnr(target, counts, peak):5.2f} dB")

# log P(y | x) for a few counts at x = 2
for y in range(6):
    print(y, round(poisson_log_pmf(y, 2.0), 4))

# a patch likelihood is the sum of its pixel terms; a dark pixel with a
# positive count rules the candidate out entirely
print(patch_log_likelihood([1, 0, 2], [1.0, 0.5, 2.0]))
print(patch_log_likelihood([1, 3, 2], [1.0, 0.0, 2.0]))
