"""Spatio-temporal feature extraction for the network input.

Channel 0 is the min-max normalized temporal variance map; channels 1-12
are the pixel-wise Pearson correlations with the 12 neighbors at L1
distance <= 2, each normalized per channel. The neighbor order is fixed
forever because channel semantics depend on it.
"""

from __future__ import annotations

import numpy as np

from .data import Block, FeatureStack, ImageMap
from .errors import ShapeError

# All offsets (dr, dc) != (0, 0) with |dr| + |dc| <= 2, lexicographic order.
NEIGHBOR_OFFSETS: tuple[tuple[int, int], ...] = (
    (-2, 0), (-1, -1), (-1, 0), (-1, 1),
    (0, -2), (0, -1), (0, 1), (0, 2),
    (1, -1), (1, 0), (1, 1), (2, 0),
)

CORRELATION_STRATEGIES = ("neighbors-full-series",)


def variance_map(block: Block) -> ImageMap:
    """Per-pixel population variance over time (divide by T), f64 accumulation."""
    frames = block.frames.astype(np.float64)
    mean = frames.mean(axis=0)
    var = np.mean((frames - mean) ** 2, axis=0)
    return ImageMap(var.astype(np.float32))


def mean_map(block: Block) -> ImageMap:
    """Per-pixel temporal mean; diagnostic output only, not a model input."""
    return ImageMap(block.frames.astype(np.float64).mean(axis=0).astype(np.float32))


def pearson(x, y) -> float:
    """Pearson correlation of two equal-length series, computed in float64.

    Returns 0.0 when either series is constant (zero denominator) and clamps
    the result to [-1, 1] against round-off.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"series shapes differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeError("need at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc)) * np.sqrt(np.dot(yc, yc))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def correlation_stack(block: Block) -> np.ndarray:
    """12 x H x W correlation channels in NEIGHBOR_OFFSETS order.

    Channel i at (h, w) correlates the pixel's full time series with the
    series at (h + dr_i, w + dc_i); out-of-bounds neighbors give 0, as do
    constant series.
    """
    frames = block.frames.astype(np.float64)
    t, height, width = frames.shape
    centered = frames - frames.mean(axis=0)
    norms = np.sqrt(np.einsum("thw,thw->hw", centered, centered))

    out = np.zeros((len(NEIGHBOR_OFFSETS), height, width), dtype=np.float32)
    for i, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        # Overlap of the image with itself shifted by (dr, dc).
        r0, r1 = max(0, -dr), min(height, height - dr)
        c0, c1 = max(0, -dc), min(width, width - dc)
        if r0 >= r1 or c0 >= c1:
            continue
        a = centered[:, r0:r1, c0:c1]
        b = centered[:, r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        numer = np.einsum("thw,thw->hw", a, b)
        denom = norms[r0:r1, c0:c1] * norms[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        channel = np.zeros_like(numer)
        np.divide(numer, denom, out=channel, where=denom != 0.0)
        out[i, r0:r1, c0:c1] = np.clip(channel, -1.0, 1.0).astype(np.float32)
    return out


def minmax_normalize_channel(values: np.ndarray) -> np.ndarray:
    """(v - min) / (max - min); an all-constant channel maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    vmin, vmax = values.min(), values.max()
    if vmax == vmin:
        return np.zeros_like(values, dtype=np.float32)
    return ((values - vmin) / (vmax - vmin)).astype(np.float32)


def build_feature_stack(block: Block, strategy: str = "neighbors-full-series") -> FeatureStack:
    """Assemble the 13-channel input: normalized variance + 12 correlations.

    ``strategy`` selects how the 12 temporal channels are formed; only the
    full-series neighbor correlation is implemented, the parameter exists so
    segment-wise variants can slot in without changing the stack format.
    """
    if strategy not in CORRELATION_STRATEGIES:
        raise ValueError(f"unknown correlation strategy {strategy!r}; "
                         f"choose from {CORRELATION_STRATEGIES}")
    channels = np.empty((13, block.height, block.width), dtype=np.float32)
    channels[0] = minmax_normalize_channel(variance_map(block).values)
    corr = correlation_stack(block)
    for i in range(corr.shape[0]):
        channels[1 + i] = minmax_normalize_channel(corr[i])
    return FeatureStack(channels)
