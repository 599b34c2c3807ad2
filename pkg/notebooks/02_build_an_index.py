"""
Building a patch prior
======================

The offline step turns clean natural images into a compressed prior:
normalized patches are clustered, and the centroids get a randomized k-d
forest plus a K-nearest-neighbor graph for fast lookup.
"""

import time

import numpy as np
from skimage import color, data, transform

from poisson_mmse import build_index, ingest_corpus, save_index

# training images, kept apart from the camera image used for testing
names = ("astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field")
images = []
for name in names:
    img = getattr(data, name)()
    img = color.rgb2gray(img) if img.ndim == 3 else img / 255.0
    images.append(transform.rescale(img, 0.5, anti_aliasing=True))

# 8x8 patches, a random 50k subset
corpus = ingest_corpus(images, side=8, cap=50_000, seed=0)
print(len(corpus), "patches of", corpus.d, "pixels")

t = time.perf_counter()
index = build_index(corpus, n_clusters=2000, k=128, n_trees=64, leaf_size=32,
                    seed=0, max_iters=10)
print(f"built in {time.perf_counter() - t:.1f} s")

# cluster sizes are very uneven: flat patches dominate natural images
counts = np.sort(index.model.counts)[::-1]
print("largest clusters:", counts[:5], "smallest:", counts[-5:])

# the WCSS never goes up from one round to the next
print(np.round(index.model.wcss_history, 1))

save_index(index, "prior.pmse")
