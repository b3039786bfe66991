"""Bit-exact on-disk container (CSF4) and 16-bit PNG export.

CSF4 layout
-----------
byte 0..3    magic, ASCII "CSF4"
byte 4..7    little-endian uint32: byte length L of the JSON header
byte 8..8+L  UTF-8 JSON object:
             {"dtype": "f32le", "shape": [T, H, W],
              "block_id": int, "frame_rate_hz": number}
rest         T*H*W little-endian float32 values, row-major [t][h][w]

Maps and masks reuse the container with shape [1, H, W]; masks store
0.0/1.0. The format is fixed so golden files stay byte-stable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .data import Block, FeatureStack, ImageMap, MaskMap
from .errors import DataError, FormatError, IoError

MAGIC = b"CSF4"
DTYPE_TAG = "f32le"


def _encode(array: np.ndarray, block_id: int, frame_rate_hz: float) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f4")
    header = json.dumps(
        {
            "dtype": DTYPE_TAG,
            "shape": [int(d) for d in array.shape],
            "block_id": int(block_id),
            "frame_rate_hz": float(frame_rate_hz),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + array.tobytes()


def write_array(path, array: np.ndarray, block_id: int = 0,
                frame_rate_hz: float = 1.0) -> None:
    """Write a rank-3 float array as a CSF4 file."""
    array = np.asarray(array)
    if array.ndim != 3:
        raise FormatError(f"container stores rank-3 arrays, got shape {array.shape}")
    if not np.isfinite(array).all():
        raise DataError("refusing to write non-finite values")
    try:
        Path(path).write_bytes(_encode(array, block_id, frame_rate_hz))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_array(path) -> tuple[np.ndarray, dict]:
    """Read a CSF4 file; returns (array, header dict). Validates strictly."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic (expected {MAGIC!r})")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("dtype") != DTYPE_TAG:
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = header.get("shape")
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(d, int) and d >= 1 for d in shape)):
        raise FormatError(f"{path}: bad shape {shape!r}")
    payload = raw[8 + header_len:]
    expected = shape[0] * shape[1] * shape[2] * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    array = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if not np.isfinite(array).all():
        raise DataError(f"{path}: payload contains NaN or Inf")
    return array.copy(), header


def save_block(block: Block, path) -> None:
    write_array(path, block.frames, block.block_id, block.frame_rate_hz)


def load_block(path) -> Block:
    array, header = read_array(path)
    return Block(
        block_id=int(header.get("block_id", 0)),
        frames=array,
        frame_rate_hz=float(header.get("frame_rate_hz", 1.0)),
    )


def save_map(image: ImageMap, path, block_id: int = 0) -> None:
    write_array(path, image.values[None, :, :], block_id)


def load_map(path) -> tuple[ImageMap, int]:
    array, header = read_array(path)
    if array.shape[0] != 1:
        raise FormatError(f"{path}: expected a [1,H,W] map, got shape {list(array.shape)}")
    return ImageMap(array[0]), int(header.get("block_id", 0))


def save_mask(mask: MaskMap, path, block_id: int = 0) -> None:
    write_array(path, mask.values[None, :, :].astype(np.float32), block_id)


def load_mask(path) -> tuple[MaskMap, int]:
    array, header = read_array(path)
    if array.shape[0] != 1:
        raise FormatError(f"{path}: expected a [1,H,W] mask, got shape {list(array.shape)}")
    values = array[0]
    if not np.isin(values, (0.0, 1.0)).all():
        raise DataError(f"{path}: mask payload has values other than 0.0/1.0")
    return MaskMap(values), int(header.get("block_id", 0))


def save_feature_stack(stack: FeatureStack, path, block_id: int = 0) -> None:
    write_array(path, stack.channels, block_id)


def load_feature_stack(path) -> tuple[FeatureStack, int]:
    array, header = read_array(path)
    return FeatureStack(array), int(header.get("block_id", 0))


def export_map_png(image: ImageMap, path, lo: float, hi: float) -> None:
    """Render a map to a 16-bit grayscale PNG.

    pixel = round_half_up(65535 * clamp((v - lo) / (hi - lo), 0, 1))
    """
    if not hi > lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    scaled = (image.values.astype(np.float64) - lo) / (hi - lo)
    pixels = np.floor(65535.0 * np.clip(scaled, 0.0, 1.0) + 0.5).astype(np.uint16)
    try:
        Image.fromarray(pixels).save(path, format="PNG")  # uint16 -> 16-bit gray
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
