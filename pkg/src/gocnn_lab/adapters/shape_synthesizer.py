"""Synthetic shape corpus with exact foreground masks.

Each sample draws one class-determined shape over a textured background.
With informative backgrounds the texture family follows the class with
probability 1 − ε and is uniform otherwise, so background pixels carry
label signal. Noise backgrounds are class-independent.

Randomness per sample comes from SeedSequence([seed, split, index]); which
samples carry masks comes from a separate stream keyed by (seed, label), so
privileged flags can be re-drawn without touching images.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from gocnn_lab.core.models import BackgroundMode, CorpusSpec, Mask, MaskPolarity, MaskResolution, SampleRecord, Split
from gocnn_lab.core.privileged import privileged_slots
from gocnn_lab.core.tensor import FloatArray
from gocnn_lab.errors import DataError, ValidationError
from gocnn_lab.observability import get_logger

logger = get_logger(__name__)

_SPLIT_STREAM = {Split.TRAIN: 0, Split.VAL: 1}

ShapePredicate = Callable[[FloatArray, FloatArray], np.ndarray]

# Predicates over normalized pixel-centre coordinates (u, v) ∈ roughly [−1, 1]², v pointing down.
_SHAPES: dict[str, ShapePredicate] = {
    "disk": lambda u, v: u * u + v * v <= 1.0,
    "square": lambda u, v: np.maximum(np.abs(u), np.abs(v)) <= 0.8,
    "triangle": lambda u, v: (v >= -0.8) & (v <= 0.8) & (np.abs(u) <= 0.5 * (v + 0.8)),
    "cross": lambda u, v: ((np.abs(u) <= 0.25) & (np.abs(v) <= 0.9)) | ((np.abs(v) <= 0.25) & (np.abs(u) <= 0.9)),
    "ring": lambda u, v: (u * u + v * v <= 1.0) & (u * u + v * v >= 0.25),
    "bar": lambda u, v: (np.abs(u) <= 0.9) & (np.abs(v) <= 0.3),
    "l_shape": lambda u, v: ((u >= -0.8) & (u <= -0.3) & (np.abs(v) <= 0.8))
    | ((u >= -0.8) & (u <= 0.8) & (v >= 0.3) & (v <= 0.8)),
    "diamond": lambda u, v: np.abs(u) + np.abs(v) <= 1.0,
}

SHAPE_NAMES: tuple[str, ...] = tuple(_SHAPES)

TEXTURE_NAMES: tuple[str, ...] = (
    "flat", "stripes_h", "stripes_v", "checker", "dots", "diagonal", "grid", "speckle",
)


@dataclass(frozen=True)
class ShapePlacement:
    """Where and how one sample's shape is drawn.

    Attributes:
        shape: Name from SHAPE_NAMES.
        center_x: Column of the centre, on the pixel-centre grid.
        center_y: Row of the centre, on the pixel-centre grid.
        radius: Half-extent in pixels; the shape fits inside the image.
        color: RGB in [0, 1].
    """

    shape: str
    center_x: float
    center_y: float
    radius: float
    color: tuple[float, float, float]


def rasterize(placement: ShapePlacement, size: int) -> FloatArray:
    """Binary [size, size] mask of the pixels whose centres fall inside the shape."""
    centres = np.arange(size, dtype=np.float64) + 0.5
    v, u = np.meshgrid((centres - placement.center_y) / placement.radius,
                       (centres - placement.center_x) / placement.radius, indexing="ij")
    return _SHAPES[placement.shape](u, v).astype(np.float64)


def _texture_pattern(family: str, size: int, rng: np.random.Generator) -> FloatArray:
    period = int(rng.integers(3, 7))
    phase = int(rng.integers(0, period))
    y, x = np.mgrid[0:size, 0:size]
    if family == "flat":
        pattern = np.zeros((size, size))
    elif family == "stripes_h":
        pattern = ((y + phase) // max(period // 2, 1)) % 2
    elif family == "stripes_v":
        pattern = ((x + phase) // max(period // 2, 1)) % 2
    elif family == "checker":
        pattern = ((y + phase) // period + (x + phase) // period) % 2
    elif family == "dots":
        pattern = (((y + phase) % period) < 2) & (((x + phase) % period) < 2)
    elif family == "diagonal":
        pattern = ((x + y + phase) // max(period // 2, 1)) % 2
    elif family == "grid":
        pattern = (((y + phase) % period) == 0) | (((x + phase) % period) == 0)
    else:
        pattern = rng.random((size, size)) > 0.5
    return np.asarray(pattern, dtype=np.float64)


def _background(spec: CorpusSpec, label: int, rng: np.random.Generator) -> FloatArray:
    size = spec.image_size
    if spec.background is BackgroundMode.NOISE:
        return 0.2 + 0.6 * rng.random((3, size, size))
    if rng.random() < spec.texture_mixing:
        family = TEXTURE_NAMES[int(rng.integers(0, len(TEXTURE_NAMES)))]
    else:
        family = TEXTURE_NAMES[label % len(TEXTURE_NAMES)]
    pattern = _texture_pattern(family, size, rng)
    low = 0.15 + 0.35 * rng.random(3)
    high = np.clip(low + 0.25 + 0.25 * rng.random(3), 0.0, 1.0)
    return low[:, None, None] * (1.0 - pattern) + high[:, None, None] * pattern


def _sample_rng(spec: CorpusSpec, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, _SPLIT_STREAM[spec.split], index]))


def _draw_placement(spec: CorpusSpec, index: int, rng: np.random.Generator) -> ShapePlacement:
    label = index % spec.num_classes
    size = spec.image_size
    radius = float(rng.uniform(0.22 * size, 0.35 * size))
    low = math.ceil(radius)
    high = size - math.ceil(radius) - 1
    center_x = float(rng.integers(low, high + 1)) + 0.5 if high > low else size / 2.0
    center_y = float(rng.integers(low, high + 1)) + 0.5 if high > low else size / 2.0
    hue = rng.random(3)
    color = 0.05 + 0.9 * (hue / max(float(hue.max()), 1e-9))
    return ShapePlacement(SHAPE_NAMES[label], center_x, center_y, radius,
                          (float(color[0]), float(color[1]), float(color[2])))


def plan_placement(spec: CorpusSpec, index: int) -> ShapePlacement:
    """Shape placement of sample ``index``; a pure function of (spec, index)."""
    return _draw_placement(spec, index, _sample_rng(spec, index))


def _render(spec: CorpusSpec, index: int) -> tuple[FloatArray, FloatArray]:
    rng = _sample_rng(spec, index)
    placement = _draw_placement(spec, index, rng)
    alpha = rasterize(placement, spec.image_size)
    if not alpha.any():
        raise DataError(f"shape {placement.shape!r} rasterized to an empty mask at index {index}")
    background = _background(spec, index % spec.num_classes, rng)
    color = np.array(placement.color)[:, None, None]
    image = background * (1.0 - alpha) + color * alpha
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0, alpha


class ShapeSynthesizer:
    """Renders corpora described by CorpusSpec.

    Args:
        workers: Threads used for rendering; output is identical for any value.
    """

    def __init__(self, workers: int = 1) -> None:
        if workers < 1:
            raise ValidationError(f"workers must be >= 1, got {workers}")
        self._workers = workers

    def generate(self, spec: CorpusSpec) -> list[SampleRecord]:
        """Render ``num_classes · samples_per_class`` records, labels interleaved.

        Raises:
            ValidationError: If more classes are requested than shapes exist.
        """
        if spec.num_classes > len(SHAPE_NAMES):
            raise ValidationError(f"at most {len(SHAPE_NAMES)} classes are available, got {spec.num_classes}")
        total = spec.num_classes * spec.samples_per_class
        indices = range(total)
        if self._workers > 1:
            with ThreadPoolExecutor(max_workers=self._workers) as pool:
                rendered = list(pool.map(lambda i: _render(spec, i), indices))
        else:
            rendered = [_render(spec, i) for i in indices]

        flags = {
            label: privileged_slots(spec.samples_per_class, spec.privileged_fraction, spec.seed, label)
            for label in range(spec.num_classes)
        }
        records = []
        for index, (image, alpha) in enumerate(rendered):
            label = index % spec.num_classes
            privileged = bool(flags[label][index // spec.num_classes])
            sentinel = Mask.sentinel(spec.image_size, spec.image_size, MaskResolution.IMAGE, MaskPolarity.FOREGROUND)
            mask = Mask(alpha, MaskResolution.IMAGE, MaskPolarity.FOREGROUND) if privileged else sentinel
            records.append(SampleRecord(image=image, label=label, mask_fg=mask, has_privileged=privileged))
        logger.info(
            "corpus_generated",
            classes=spec.num_classes,
            per_class=spec.samples_per_class,
            privileged=sum(record.has_privileged for record in records),
            background=spec.background.value,
            split=spec.split.value,
            seed=spec.seed,
        )
        return records
