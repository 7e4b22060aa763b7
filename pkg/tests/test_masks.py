"""Tests for mask downsampling and batch mask stacks."""

import numpy as np
import pytest

from gocnn_lab.core.masks import downsample_mask, feature_masks
from gocnn_lab.core.models import LayerShape, Mask, MaskPolarity, MaskResolution, SampleRecord
from gocnn_lab.errors import ValidationError
from tests.factories import centre_square, make_record


def image_mask(data: np.ndarray) -> Mask:
    return Mask(data, MaskResolution.IMAGE, MaskPolarity.FOREGROUND)


def layer(height: int, width: int | None = None) -> LayerShape:
    return LayerShape(channels=1, height=height, width=width or height, layer_index=1)


class TestDownsampleMask:
    def test_all_ones_stays_all_ones(self) -> None:
        small = downsample_mask(image_mask(np.ones((8, 8))), layer(2))
        np.testing.assert_array_equal(small.data, np.ones((2, 2)))
        assert small.resolution is MaskResolution.FEATURE

    def test_sentinel_stays_sentinel(self) -> None:
        small = downsample_mask(Mask.sentinel(8, 8, MaskResolution.IMAGE, MaskPolarity.BACKGROUND), layer(4))
        assert small.is_sentinel
        assert small.polarity is MaskPolarity.BACKGROUND

    def test_quadrant_object_sets_one_cell(self) -> None:
        data = np.zeros((8, 8))
        data[:4, :4] = 1.0
        small = downsample_mask(image_mask(data), layer(2))
        np.testing.assert_array_equal(small.data, [[1.0, 0.0], [0.0, 0.0]])

    def test_half_covered_block_is_kept(self) -> None:
        data = np.zeros((4, 4))
        data[0:2, 0] = 1.0
        small = downsample_mask(image_mask(data), layer(2))
        assert small.data[0, 0] == 1.0

    def test_uneven_blocks(self) -> None:
        small = downsample_mask(image_mask(np.ones((7, 5))), layer(3, 2))
        assert small.shape == (3, 2)
        assert small.data.all()

    def test_upsampling_is_rejected(self) -> None:
        with pytest.raises(ValidationError, match="upsample"):
            downsample_mask(image_mask(np.ones((4, 4))), layer(8))


class TestFeatureMasks:
    def test_privileged_samples_get_complementary_pair(self, mixed_records: list[SampleRecord]) -> None:
        fg, bg = feature_masks(mixed_records, layer(4))
        assert fg.shape == bg.shape == (4, 4, 4)
        np.testing.assert_array_equal(fg[0] + bg[0], np.ones((4, 4)))
        np.testing.assert_array_equal(fg[0][1:3, 1:3], np.ones((2, 2)))

    def test_sentinels_give_zero_pair(self, mixed_records: list[SampleRecord]) -> None:
        fg, bg = feature_masks(mixed_records, layer(4))
        for index in (1, 3):
            assert not fg[index].any()
            assert not bg[index].any()

    def test_object_that_vanishes_leaves_all_background(self) -> None:
        data = np.zeros((8, 8))
        data[0, 0] = 1.0
        fg, bg = feature_masks([make_record(0, mask=data)], layer(2))
        assert not fg.any()
        np.testing.assert_array_equal(bg[0], np.ones((2, 2)))

    def test_full_privileged_batch(self) -> None:
        records = [make_record(label, mask=centre_square(low=1, high=7), seed=label) for label in range(3)]
        fg, _ = feature_masks(records, layer(2))
        np.testing.assert_array_equal(fg, np.ones((3, 2, 2)))
