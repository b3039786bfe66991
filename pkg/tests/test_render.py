import numpy as np

from calseg.data import Block, MaskMap
from calseg.render import (AGREE_COLOR, PRED_COLOR, TRUTH_COLOR, contour,
                           grayscale_background, overlay_image)


def mask(values):
    return MaskMap(np.asarray(values, dtype=np.uint8))


class TestContour:
    def test_single_pixel_is_its_own_contour(self):
        m = mask([[0, 0, 0], [0, 1, 0], [0, 0, 0]])
        assert np.array_equal(contour(m), m.values.astype(bool))

    def test_filled_square_keeps_only_the_ring(self):
        values = np.zeros((5, 5), dtype=np.uint8)
        values[1:4, 1:4] = 1
        edge = contour(mask(values))
        assert edge[1, 1] and edge[1, 3] and edge[2, 1]
        assert not edge[2, 2]  # interior removed

    def test_border_foreground_counts_as_contour(self):
        values = np.ones((3, 3), dtype=np.uint8)
        edge = contour(mask(values))
        assert edge[0, 0] and edge[0, 2] and edge[2, 0]
        assert not edge[1, 1]


class TestOverlay:
    def test_identical_masks_show_only_the_merged_color(self):
        values = np.zeros((5, 5), dtype=np.uint8)
        values[1:4, 1:4] = 1
        m = mask(values)
        rgb = overlay_image(np.zeros((5, 5), dtype=np.uint8), m, m)
        edge = contour(m)
        assert (rgb[edge] == AGREE_COLOR).all()
        assert not (rgb == TRUTH_COLOR).all(axis=2).any()
        assert not (rgb == PRED_COLOR).all(axis=2).any()

    def test_disjoint_masks_show_both_colors(self):
        truth = mask([[1, 0, 0], [0, 0, 0], [0, 0, 0]])
        pred = mask([[0, 0, 0], [0, 0, 0], [0, 0, 1]])
        rgb = overlay_image(np.full((3, 3), 128, dtype=np.uint8), truth, pred)
        assert tuple(rgb[0, 0]) == TRUTH_COLOR
        assert tuple(rgb[2, 2]) == PRED_COLOR
        assert tuple(rgb[1, 1]) == (128, 128, 128)


class TestBackground:
    def test_grayscale_spans_full_range(self, rng):
        frames = rng.normal(size=(4, 6, 6)).astype(np.float32)
        gray = grayscale_background(Block(block_id=0, frames=frames))
        assert gray.dtype == np.uint8
        assert gray.min() == 0 and gray.max() == 255
