"""Mask resolution changes and per-batch mask stacks.

Image-resolution masks meet feature maps through block averaging over the
stride grid followed by a 0.5 threshold, so downsampled masks stay binary.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from gocnn_lab.core.models import LayerShape, Mask, MaskResolution, SampleRecord
from gocnn_lab.core.tensor import FloatArray
from gocnn_lab.errors import ValidationError


def _block_means(array: FloatArray, rows: int, cols: int) -> FloatArray:
    height, width = array.shape
    row_edges = (np.arange(rows + 1) * height) // rows
    col_edges = (np.arange(cols + 1) * width) // cols
    row_sums = np.add.reduceat(array, row_edges[:-1], axis=0)
    block_sums = np.add.reduceat(row_sums, col_edges[:-1], axis=1)
    counts = np.outer(np.diff(row_edges), np.diff(col_edges))
    return block_sums / counts


def downsample_mask(mask: Mask, target: LayerShape) -> Mask:
    """Bring a mask down to a layer's spatial resolution.

    Args:
        mask: Binary mask [H, W].
        target: Layer whose height and width to match.

    Returns:
        Feature-resolution mask with the same polarity; the sentinel stays the sentinel.

    Raises:
        ValidationError: If the target is larger than the mask in either dimension.
    """
    height, width = mask.shape
    if target.height > height or target.width > width:
        raise ValidationError(
            f"downsample_mask: cannot upsample {height}x{width} to {target.height}x{target.width}"
        )
    if mask.is_sentinel:
        return Mask.sentinel(target.height, target.width, MaskResolution.FEATURE, mask.polarity)
    means = _block_means(mask.data, target.height, target.width)
    return Mask((means >= 0.5).astype(np.float64), MaskResolution.FEATURE, mask.polarity)


def feature_masks(records: Sequence[SampleRecord], target: LayerShape) -> tuple[FloatArray, FloatArray]:
    """Stack feature-resolution (Mask_f, Mask_b) for a batch.

    Mask_b is taken as the complement of the *downsampled* Mask_f, so the pair
    always sums to ones on privileged samples (even when a small object
    vanishes at feature resolution) and both stay zero on sentinels.

    Returns:
        Arrays of shape [B, h, w] for the foreground and background masks.
    """
    fg = np.zeros((len(records), target.height, target.width), dtype=np.float64)
    bg = np.zeros_like(fg)
    for index, record in enumerate(records):
        if not record.has_privileged:
            continue
        small = downsample_mask(record.mask_fg, target)
        fg[index] = small.data
        bg[index] = 1.0 - small.data
    return fg, bg
