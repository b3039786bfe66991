"""Core data model: recording blocks and the 2D maps derived from them.

All types are immutable after construction (arrays are set read-only) and
validate their invariants eagerly, so downstream code can assume finite,
well-shaped data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

N_FEATURE_CHANNELS = 13


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.isfinite(a).all():
        raise DataError(f"{what} contains NaN or Inf")


@dataclass(frozen=True)
class Block:
    """One recording block: T frames of H x W fluorescence intensities."""

    block_id: int
    frames: np.ndarray  # (T, H, W) float32, row-major
    frame_rate_hz: float = 1.0

    def __post_init__(self):
        if self.block_id < 0:
            raise DataError(f"block_id must be >= 0, got {self.block_id}")
        if self.frame_rate_hz <= 0:
            raise DataError(f"frame_rate_hz must be > 0, got {self.frame_rate_hz}")
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 3:
            raise ShapeError(f"frames must be rank 3 (T,H,W), got shape {frames.shape}")
        t, h, w = frames.shape
        if t < 2 or h < 1 or w < 1:
            raise ShapeError(f"need T >= 2, H >= 1, W >= 1, got {frames.shape}")
        _require_finite(frames, "frames")
        object.__setattr__(self, "frames", _freeze(frames))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class Recording:
    """Ordered collection of blocks sharing one field of view."""

    blocks: tuple[Block, ...] = field(default_factory=tuple)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        ids = [b.block_id for b in blocks]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate block_ids: {sorted(ids)}")
        shapes = {(b.height, b.width) for b in blocks}
        if len(shapes) > 1:
            raise ShapeError(f"blocks disagree on H x W: {sorted(shapes)}")
        object.__setattr__(self, "blocks", blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)


@dataclass(frozen=True)
class ImageMap:
    """Single-channel H x W map of float32 values (variance, probability, ...)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ShapeError(f"map must be rank 2 (H,W), got shape {values.shape}")
        _require_finite(values, "map values")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MaskMap:
    """Binary H x W segmentation mask; 1 = foreground."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ShapeError(f"mask must be rank 2 (H,W), got shape {values.shape}")
        as_u8 = values.astype(np.uint8)
        if not np.array_equal(values.astype(np.float64), as_u8.astype(np.float64)) or as_u8.max(initial=0) > 1:
            raise DataError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "values", _freeze(as_u8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def foreground_fraction(self) -> float:
        return float(self.values.mean(dtype=np.float64))


@dataclass(frozen=True)
class FeatureStack:
    """Network input: 13 x H x W, channel 0 spatial summary, 1-12 temporal."""

    channels: np.ndarray

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float32)
        if channels.ndim != 3 or channels.shape[0] != N_FEATURE_CHANNELS:
            raise ShapeError(
                f"feature stack must be ({N_FEATURE_CHANNELS},H,W), got {channels.shape}"
            )
        _require_finite(channels, "feature channels")
        object.__setattr__(self, "channels", _freeze(channels))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.channels.shape
