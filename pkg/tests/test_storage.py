import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from calseg.data import Block, ImageMap, MaskMap
from calseg.errors import DataError, FormatError, IoError
from calseg import storage


def _block(rng, t=3, h=4, w=5, block_id=7):
    return Block(block_id=block_id,
                 frames=rng.normal(size=(t, h, w)).astype(np.float32),
                 frame_rate_hz=2.0)


class TestContainerRoundTrip:
    def test_block_round_trip_bit_exact(self, rng, tmp_path):
        block = _block(rng)
        path = tmp_path / "b.csf4"
        storage.save_block(block, path)
        loaded = storage.load_block(path)
        assert loaded.block_id == block.block_id
        assert loaded.frame_rate_hz == block.frame_rate_hz
        assert loaded.frames.tobytes() == block.frames.tobytes()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 5), st.integers(1, 6), st.integers(1, 6),
           st.integers(0, 10**6))
    def test_any_block_round_trips(self, t, h, w, seed):
        rng = np.random.default_rng(seed)
        block = _block(rng, t, h, w, block_id=seed)
        import tempfile, os
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "b.csf4")
            storage.save_block(block, path)
            loaded = storage.load_block(path)
        assert loaded.frames.tobytes() == block.frames.tobytes()

    def test_payload_bytes_are_le_f32(self, tmp_path):
        # Hand-computed IEEE-754 little-endian layout for [1.0, 2.0].
        block = Block(block_id=0, frames=np.array([[[1.0]], [[2.0]]], dtype=np.float32))
        path = tmp_path / "tiny.csf4"
        storage.save_block(block, path)
        raw = path.read_bytes()
        assert raw[:4] == b"CSF4"
        (hlen,) = struct.unpack("<I", raw[4:8])
        header = json.loads(raw[8:8 + hlen])
        assert header["shape"] == [2, 1, 1]
        payload = raw[8 + hlen:]
        assert len(payload) == 8
        assert payload == struct.pack("<2f", 1.0, 2.0)

    def test_write_to_missing_directory_raises(self, rng, tmp_path):
        with pytest.raises(IoError):
            storage.save_block(_block(rng), tmp_path / "nope" / "b.csf4")

    def test_map_and_mask_round_trip(self, rng, tmp_path):
        image = ImageMap(rng.normal(size=(4, 6)).astype(np.float32))
        storage.save_map(image, tmp_path / "m.csf4", block_id=3)
        loaded, block_id = storage.load_map(tmp_path / "m.csf4")
        assert block_id == 3
        assert loaded.values.tobytes() == image.values.tobytes()

        mask = MaskMap((rng.random((4, 6)) < 0.5).astype(np.uint8))
        storage.save_mask(mask, tmp_path / "k.csf4", block_id=9)
        loaded_mask, block_id = storage.load_mask(tmp_path / "k.csf4")
        assert block_id == 9
        assert np.array_equal(loaded_mask.values, mask.values)


class TestContainerValidation:
    def _valid_bytes(self, rng):
        import io
        path = io.BytesIO()
        block = _block(rng)
        return storage._encode(block.frames, 0, 1.0)

    def test_bad_magic(self, rng, tmp_path):
        raw = self._valid_bytes(rng)
        (tmp_path / "x.csf4").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(FormatError):
            storage.load_block(tmp_path / "x.csf4")

    def test_truncated_payload(self, rng, tmp_path):
        raw = self._valid_bytes(rng)
        (tmp_path / "x.csf4").write_bytes(raw[:-4])
        with pytest.raises(FormatError):
            storage.load_block(tmp_path / "x.csf4")

    def test_trailing_garbage(self, rng, tmp_path):
        raw = self._valid_bytes(rng)
        (tmp_path / "x.csf4").write_bytes(raw + b"\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            storage.load_block(tmp_path / "x.csf4")

    def test_nan_payload(self, rng, tmp_path):
        frames = np.ones((2, 1, 1), dtype=np.float32)
        raw = storage._encode(frames, 0, 1.0)
        bad = raw[:-4] + struct.pack("<f", float("nan"))
        (tmp_path / "x.csf4").write_bytes(bad)
        with pytest.raises(DataError):
            storage.load_block(tmp_path / "x.csf4")

    def test_header_not_json(self, rng, tmp_path):
        raw = self._valid_bytes(rng)
        (hlen,) = struct.unpack("<I", raw[4:8])
        (tmp_path / "x.csf4").write_bytes(raw[:8] + b"{" * hlen + raw[8 + hlen:])
        with pytest.raises(FormatError):
            storage.load_block(tmp_path / "x.csf4")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            storage.load_block(tmp_path / "missing.csf4")


class TestPngExport:
    def _pixels(self, path):
        return np.asarray(Image.open(path), dtype=np.uint32)

    def test_constant_lo_is_black(self, tmp_path):
        image = ImageMap(np.full((3, 3), 2.0, dtype=np.float32))
        storage.export_map_png(image, tmp_path / "p.png", lo=2.0, hi=5.0)
        assert (self._pixels(tmp_path / "p.png") == 0).all()

    def test_constant_hi_is_white(self, tmp_path):
        image = ImageMap(np.full((3, 3), 5.0, dtype=np.float32))
        storage.export_map_png(image, tmp_path / "p.png", lo=2.0, hi=5.0)
        assert (self._pixels(tmp_path / "p.png") == 65535).all()

    def test_midpoint_rounds_half_up(self, tmp_path):
        # (lo+hi)/2 maps to 65535*0.5 = 32767.5 -> 32768.
        image = ImageMap(np.full((2, 2), 1.5, dtype=np.float32))
        storage.export_map_png(image, tmp_path / "p.png", lo=1.0, hi=2.0)
        assert (self._pixels(tmp_path / "p.png") == 32768).all()

    def test_monotone_in_value(self, rng, tmp_path):
        values = np.sort(rng.uniform(-3, 3, size=64)).reshape(8, 8).astype(np.float32)
        storage.export_map_png(ImageMap(values), tmp_path / "p.png", lo=-1.0, hi=1.0)
        flat = self._pixels(tmp_path / "p.png").reshape(-1)
        assert (np.diff(flat) >= 0).all()

    def test_rejects_bad_range(self, tmp_path):
        with pytest.raises(ValueError):
            storage.export_map_png(ImageMap(np.zeros((2, 2), dtype=np.float32)),
                                   tmp_path / "p.png", lo=1.0, hi=1.0)
