import numpy as np
import pytest

from calseg.data import Block, FeatureStack, ImageMap, MaskMap, Recording
from calseg.errors import DataError, ShapeError
from calseg.seeding import mix64, split_seed


class TestBlock:
    def test_valid_block(self, rng):
        block = Block(block_id=3, frames=rng.normal(size=(4, 5, 6)).astype(np.float32),
                      frame_rate_hz=0.5)
        assert block.shape == (4, 5, 6)
        assert block.frames.dtype == np.float32

    def test_frames_are_frozen(self, rng):
        block = Block(block_id=0, frames=rng.normal(size=(2, 2, 2)).astype(np.float32))
        with pytest.raises(ValueError):
            block.frames[0, 0, 0] = 1.0

    def test_too_few_frames_rejected(self):
        with pytest.raises(ShapeError):
            Block(block_id=0, frames=np.zeros((1, 4, 4), dtype=np.float32))

    def test_nan_rejected(self):
        frames = np.zeros((2, 2, 2), dtype=np.float32)
        frames[0, 0, 0] = np.nan
        with pytest.raises(DataError):
            Block(block_id=0, frames=frames)

    def test_negative_id_rejected(self):
        with pytest.raises(DataError):
            Block(block_id=-1, frames=np.zeros((2, 2, 2), dtype=np.float32))


class TestRecording:
    def _block(self, bid, shape=(2, 3, 3)):
        return Block(block_id=bid, frames=np.zeros(shape, dtype=np.float32))

    def test_collects_blocks(self):
        rec = Recording(blocks=(self._block(0), self._block(1)))
        assert len(rec) == 2
        assert [b.block_id for b in rec] == [0, 1]

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            Recording(blocks=(self._block(1), self._block(1)))

    def test_mismatched_field_of_view_rejected(self):
        with pytest.raises(ShapeError):
            Recording(blocks=(self._block(0), self._block(1, shape=(2, 4, 4))))


class TestMaps:
    def test_mask_requires_binary(self):
        with pytest.raises(DataError):
            MaskMap(np.array([[0.0, 0.5]]))

    def test_mask_accepts_float_zeros_ones(self):
        mask = MaskMap(np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32))
        assert mask.values.dtype == np.uint8
        assert mask.foreground_fraction() == 0.5

    def test_image_map_rejects_inf(self):
        with pytest.raises(DataError):
            ImageMap(np.array([[np.inf, 0.0]], dtype=np.float32))

    def test_feature_stack_needs_13_channels(self, rng):
        with pytest.raises(ShapeError):
            FeatureStack(rng.normal(size=(12, 4, 4)).astype(np.float32))


class TestSeeding:
    def test_mix64_is_avalanching(self):
        a = mix64(1)
        b = mix64(2)
        assert a != b
        assert bin(a ^ b).count("1") > 16  # many bits flip for adjacent inputs

    def test_split_seed_deterministic_and_distinct(self):
        assert split_seed(7, 0) == split_seed(7, 0)
        children = {split_seed(7, i) for i in range(1000)}
        assert len(children) == 1000

    def test_split_seed_multi_index(self):
        assert split_seed(7, 1, 2) != split_seed(7, 2, 1)
        assert split_seed(7, 1, 2) == split_seed(7, 1, 2)

    def test_split_seed_fits_64_bits(self):
        for i in range(50):
            assert 0 <= split_seed(2**63 + 11, i) < 2**64
