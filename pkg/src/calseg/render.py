"""Static result images: grayscale maps and contour overlays."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .data import Block, ImageMap, MaskMap
from .errors import IoError
from .features import minmax_normalize_channel

TRUTH_COLOR = (255, 216, 0)      # reference contour
PRED_COLOR = (64, 128, 255)      # prediction contour
AGREE_COLOR = (0, 230, 118)      # where the two contours coincide


def contour(mask: MaskMap) -> np.ndarray:
    """Boolean map of foreground pixels with a background 4-neighbor
    (image borders count as background)."""
    m = mask.values.astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def grayscale_background(block: Block) -> np.ndarray:
    """8-bit grayscale of the block's temporal mean, min-max scaled."""
    mean = block.frames.astype(np.float64).mean(axis=0)
    scaled = minmax_normalize_channel(mean)
    return np.floor(scaled.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def overlay_image(background: np.ndarray, truth: MaskMap, pred: MaskMap) -> np.ndarray:
    """RGB overlay: truth contour, prediction contour, merged color on overlap."""
    rgb = np.repeat(background[:, :, None], 3, axis=2).astype(np.uint8)
    truth_edge = contour(truth)
    pred_edge = contour(pred)
    both = truth_edge & pred_edge
    rgb[truth_edge & ~both] = TRUTH_COLOR
    rgb[pred_edge & ~both] = PRED_COLOR
    rgb[both] = AGREE_COLOR
    return rgb


def save_rgb_png(rgb: np.ndarray, path) -> None:
    try:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def mean_frame_map(block: Block) -> ImageMap:
    return ImageMap(block.frames.astype(np.float64).mean(axis=0).astype(np.float32))
