"""Tests for the synthetic shape corpus."""

import math

import numpy as np
import pytest

from gocnn_lab.adapters.shape_synthesizer import (
    SHAPE_NAMES,
    ShapePlacement,
    ShapeSynthesizer,
    plan_placement,
    rasterize,
)
from gocnn_lab.core.models import BackgroundMode, CorpusSpec, Split
from gocnn_lab.core.privileged import assign_privileged, foreground_only, privileged_slots
from gocnn_lab.errors import DataError, ValidationError


def spec(**overrides: object) -> CorpusSpec:
    values: dict[str, object] = {"num_classes": 4, "samples_per_class": 5, "image_size": 16, "seed": 1}
    values.update(overrides)
    return CorpusSpec.model_validate(values)


class TestPrivilegedFlags:
    @pytest.mark.parametrize("fraction", [0.0, 0.2, 0.5, 0.7, 1.0])
    def test_each_class_gets_rounded_share(self, fraction: float) -> None:
        records = ShapeSynthesizer().generate(spec(samples_per_class=7, privileged_fraction=fraction))
        for label in range(4):
            flagged = sum(r.has_privileged for r in records if r.label == label)
            assert flagged == math.floor(fraction * 7 + 0.5)

    def test_full_and_empty_corpora(self) -> None:
        assert all(r.has_privileged for r in ShapeSynthesizer().generate(spec(privileged_fraction=1.0)))
        empty = ShapeSynthesizer().generate(spec(privileged_fraction=0.0))
        assert not any(r.has_privileged for r in empty)
        assert all(r.mask_fg.is_sentinel for r in empty)

    def test_slots_reject_bad_fraction(self) -> None:
        with pytest.raises(ValidationError):
            privileged_slots(5, 1.5, 0, 0)

    def test_reassignment_matches_direct_generation(self) -> None:
        full = ShapeSynthesizer().generate(spec(privileged_fraction=1.0))
        direct = ShapeSynthesizer().generate(spec(privileged_fraction=0.4))
        reassigned = assign_privileged(full, 0.4, seed=1)
        assert [r.has_privileged for r in reassigned] == [r.has_privileged for r in direct]
        assert all(a.same_as(b) for a, b in zip(reassigned, direct, strict=True))

    def test_reassignment_needs_full_corpus(self) -> None:
        partial = ShapeSynthesizer().generate(spec(privileged_fraction=0.2))
        with pytest.raises(DataError):
            assign_privileged(partial, 1.0, seed=1)


class TestRendering:
    def test_labels_are_interleaved(self) -> None:
        records = ShapeSynthesizer().generate(spec())
        assert [r.label for r in records[:8]] == [0, 1, 2, 3, 0, 1, 2, 3]
        assert len(records) == 20

    def test_disk_masks_match_the_circle_formula(self) -> None:
        corpus = spec(samples_per_class=6)
        records = ShapeSynthesizer().generate(corpus)
        centres = np.arange(16) + 0.5
        for index, record in enumerate(records):
            if record.label != 0:
                continue
            placement = plan_placement(corpus, index)
            assert placement.shape == "disk"
            y, x = np.meshgrid(centres, centres, indexing="ij")
            inside = (x - placement.center_x) ** 2 + (y - placement.center_y) ** 2 <= placement.radius**2
            np.testing.assert_array_equal(record.mask_fg.data, inside.astype(np.float64))

    def test_shape_pixels_carry_the_shape_colour(self) -> None:
        corpus = spec()
        records = ShapeSynthesizer().generate(corpus)
        for index in (0, 5, 11):
            placement = plan_placement(corpus, index)
            inside = records[index].mask_fg.data.astype(bool)
            colour = np.round(np.array(placement.color) * 255.0) / 255.0
            for channel in range(3):
                np.testing.assert_allclose(records[index].image[channel][inside], colour[channel], atol=1e-12)

    def test_shapes_stay_inside_the_image(self) -> None:
        corpus = spec(num_classes=8, samples_per_class=10)
        for index in range(80):
            placement = plan_placement(corpus, index)
            assert placement.center_x - placement.radius >= 0.0
            assert placement.center_x + placement.radius <= 16.0
            assert placement.center_y - placement.radius >= 0.0
            assert placement.center_y + placement.radius <= 16.0

    @pytest.mark.parametrize("shape", SHAPE_NAMES)
    def test_every_shape_rasterizes(self, shape: str) -> None:
        mask = rasterize(ShapePlacement(shape, 8.0, 8.0, 5.0, (1.0, 0.0, 0.0)), 16)
        assert 0 < mask.sum() < 256

    def test_pixels_are_quantized(self) -> None:
        for record in ShapeSynthesizer().generate(spec(samples_per_class=2)):
            np.testing.assert_allclose(record.image * 255.0, np.round(record.image * 255.0), atol=1e-9)

    def test_noise_background_stays_in_range(self) -> None:
        records = ShapeSynthesizer().generate(spec(background=BackgroundMode.NOISE))
        for record in records:
            outside = ~record.mask_fg.data.astype(bool)
            values = record.image[:, outside]
            assert values.min() >= 0.2 - 1e-9
            assert values.max() <= 0.8 + 1e-9

    def test_unmixed_informative_background_follows_the_class(self) -> None:
        records = ShapeSynthesizer().generate(spec(texture_mixing=0.0))
        for record in records:
            if record.label != 0:
                continue
            outside = ~record.mask_fg.data.astype(bool)
            # class 0 uses the flat family: one colour per channel
            for channel in range(3):
                assert np.unique(record.image[channel][outside]).size == 1


class TestDeterminism:
    def test_same_spec_same_corpus(self) -> None:
        first = ShapeSynthesizer().generate(spec())
        second = ShapeSynthesizer().generate(spec())
        assert all(a.same_as(b) for a, b in zip(first, second, strict=True))

    def test_worker_count_does_not_change_output(self) -> None:
        serial = ShapeSynthesizer(workers=1).generate(spec())
        threaded = ShapeSynthesizer(workers=3).generate(spec())
        assert all(a.same_as(b) for a, b in zip(serial, threaded, strict=True))

    def test_seed_and_split_change_images(self) -> None:
        base = ShapeSynthesizer().generate(spec())
        reseeded = ShapeSynthesizer().generate(spec(seed=2))
        validation = ShapeSynthesizer().generate(spec(split=Split.VAL))
        assert not np.array_equal(base[0].image, reseeded[0].image)
        assert not np.array_equal(base[0].image, validation[0].image)

    def test_rejects_bad_worker_count(self) -> None:
        with pytest.raises(ValidationError):
            ShapeSynthesizer(workers=0)


class TestForegroundOnly:
    def test_background_pixels_are_zeroed(self) -> None:
        records = foreground_only(ShapeSynthesizer().generate(spec(samples_per_class=2)))
        for record in records:
            outside = ~record.mask_fg.data.astype(bool)
            assert not record.image[:, outside].any()

    def test_needs_masks(self) -> None:
        with pytest.raises(DataError):
            foreground_only(ShapeSynthesizer().generate(spec(privileged_fraction=0.0)))
