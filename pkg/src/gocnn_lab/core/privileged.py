"""Which samples carry privileged masks, and record transforms that depend on them.

Flags come from their own random stream keyed by (seed, label), independent
of any image stream, so a corpus can be re-flagged without re-rendering.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from gocnn_lab.core.models import Mask, MaskPolarity, MaskResolution, SampleRecord
from gocnn_lab.core.tensor import FloatArray
from gocnn_lab.errors import DataError, ValidationError

_PRIVILEGE_STREAM = 0x5052


def privileged_slots(count: int, fraction: float, seed: int, label: int) -> np.ndarray:
    """Boolean flags for the ``count`` samples of one class; exactly floor(p·n + 0.5) are set."""
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"privileged fraction must lie in [0, 1], got {fraction}")
    chosen = math.floor(fraction * count + 0.5)
    order = np.random.default_rng(np.random.SeedSequence([seed, _PRIVILEGE_STREAM, label])).permutation(count)
    flags = np.zeros(count, dtype=bool)
    flags[order[:chosen]] = True
    return flags


def _with_mask(record: SampleRecord, mask: FloatArray | None) -> SampleRecord:
    height, width = record.height, record.width
    if mask is None:
        fg = Mask.sentinel(height, width, MaskResolution.IMAGE, MaskPolarity.FOREGROUND)
    else:
        fg = Mask(mask, MaskResolution.IMAGE, MaskPolarity.FOREGROUND)
    return SampleRecord(image=record.image, label=record.label, mask_fg=fg, has_privileged=mask is not None)


def assign_privileged(records: Sequence[SampleRecord], fraction: float, seed: int) -> list[SampleRecord]:
    """Re-draw which records carry masks, stratified per class; images are untouched.

    Records must all carry masks on input whenever they are to be flagged, so
    callers start from a fully privileged corpus.

    Raises:
        DataError: If a record selected for privilege has no mask to keep.
    """
    by_label: dict[int, list[int]] = {}
    for position, record in enumerate(records):
        by_label.setdefault(record.label, []).append(position)
    keep = np.zeros(len(records), dtype=bool)
    for label, positions in by_label.items():
        flags = privileged_slots(len(positions), fraction, seed, label)
        keep[np.array(positions)[flags]] = True
    out = []
    for position, record in enumerate(records):
        if keep[position] and not record.has_privileged:
            raise DataError("assign_privileged needs a fully privileged corpus to select from")
        out.append(_with_mask(record, record.mask_fg.data if keep[position] else None))
    return out


def foreground_only(records: Sequence[SampleRecord]) -> list[SampleRecord]:
    """Copies of ``records`` with every background pixel set to zero.

    Raises:
        DataError: If a record has no mask to separate foreground from background.
    """
    out = []
    for record in records:
        if not record.has_privileged:
            raise DataError("foreground_only needs a mask on every record")
        image = record.image * record.mask_fg.data[None, :, :]
        out.append(SampleRecord(image=image, label=record.label, mask_fg=record.mask_fg, has_privileged=True))
    return out
