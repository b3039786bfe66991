"""Synthetic training labels: Otsu thresholding of temporal variance maps.

Classic 256-bin histogram Otsu: pick the bin boundary that maximizes the
between-class variance w0*w1*(mu0-mu1)^2, which is the same threshold that
minimizes the weighted intra-class variance. Ties break toward the lowest
threshold so label files are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Block, ImageMap, MaskMap
from .errors import DegenerateInputError
from .features import variance_map

N_BINS = 256


@dataclass(frozen=True)
class OtsuResult:
    threshold: float            # in map value units, at a bin boundary
    between_class_variance: float
    histogram: np.ndarray       # N_BINS integer counts, sums to H*W
    bin_index: int              # boundary index in 1..N_BINS-1


def otsu_threshold(image: ImageMap) -> OtsuResult:
    """Histogram Otsu over 256 linear bins spanning [min, max]."""
    values = image.values.astype(np.float64)
    vmin, vmax = float(values.min()), float(values.max())
    if vmax == vmin:
        raise DegenerateInputError("map is constant; no threshold separates it")

    hist, _ = np.histogram(values, bins=N_BINS, range=(vmin, vmax))
    total = hist.sum()

    # Between-class variance per interior boundary, from cumulative sums.
    # Bin indices stand in for values: the argmax is invariant to the affine
    # map between index space and value space.
    counts = hist.astype(np.float64)
    idx = np.arange(N_BINS, dtype=np.float64)
    w0 = np.cumsum(counts)[:-1]                      # mass of bins < boundary
    w1 = total - w0
    sum0 = np.cumsum(counts * idx)[:-1]
    sum_all = float(np.sum(counts * idx))
    objective = np.zeros(N_BINS - 1, dtype=np.float64)
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.divide(sum0, w0, out=np.zeros_like(sum0), where=valid)
    mu1 = np.divide(sum_all - sum0, w1, out=np.zeros_like(sum0), where=valid)
    objective[valid] = ((w0 / total) * (w1 / total) * (mu0 - mu1) ** 2)[valid]

    best = int(np.argmax(objective))  # first maximum = lowest threshold
    bin_index = best + 1
    bin_width = (vmax - vmin) / N_BINS
    return OtsuResult(
        threshold=vmin + bin_index * bin_width,
        between_class_variance=float(objective[best]) * bin_width ** 2,
        histogram=hist,
        bin_index=bin_index,
    )


def make_groundtruth(block: Block) -> MaskMap:
    """Label map: 1 where the block's temporal variance exceeds Otsu's threshold."""
    vmap = variance_map(block)
    result = otsu_threshold(vmap)
    return MaskMap((vmap.values > result.threshold).astype(np.uint8))
