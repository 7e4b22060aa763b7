"""Tests for the diversity metrics and group energy probe."""

import numpy as np
import pytest

from gocnn_lab.core.diversity import (
    diversity_report,
    group_activation_energy,
    group_diversity,
    model_diversity,
    offdiagonal_diversity,
    pearson_corr,
    probe_layer,
    response_matrix,
)
from gocnn_lab.core.models import ActivationSample, GroupPartition, LayerShape, SampleRecord
from gocnn_lab.errors import NotFoundError, ShapeError, ValidationError
from tests.factories import centre_square, make_record


class FakeExtractor:
    """Two-layer extractor whose final layer echoes image channels 0 and 1 with fixed scaling."""

    def __init__(self) -> None:
        self.partition = GroupPartition.contiguous((2, 1), ("foreground", "background"))
        self.num_layers = 2
        self.calls: list[int] = []

    def layer_output(self, images: np.ndarray, layer_index: int) -> np.ndarray:
        self.calls.append(images.shape[0])
        if layer_index == 1:
            return images[:, :2]
        red, green = images[:, 0:1], images[:, 1:2]
        return np.concatenate([red, 2.0 * red + 1.0, green], axis=1)


class TestPearsonCorr:
    def test_matches_numpy_corrcoef(self, rng: np.random.Generator) -> None:
        values = rng.standard_normal((20, 5))
        np.testing.assert_allclose(pearson_corr(ActivationSample(values, 1)), np.corrcoef(values.T), atol=1e-12)

    def test_dead_column_correlates_zero_including_itself(self, rng: np.random.Generator) -> None:
        values = rng.standard_normal((10, 3))
        values[:, 1] = 4.0
        corr = pearson_corr(ActivationSample(values, 1))
        assert not corr[1].any()
        assert not corr[:, 1].any()
        assert corr[0, 0] == corr[2, 2] == 1.0

    def test_needs_two_samples(self) -> None:
        with pytest.raises(ValidationError):
            ActivationSample(np.zeros((1, 3)), 1)


class TestModelDiversity:
    def test_two_functions_half_correlated(self) -> None:
        assert model_diversity(np.array([[1.0, 0.5], [0.5, 1.0]])) == pytest.approx(0.25)

    @pytest.mark.parametrize("c", [1, 2, 5, 16])
    def test_identity_reaches_upper_bound(self, c: int) -> None:
        assert model_diversity(np.eye(c)) == pytest.approx(1.0 - 1.0 / c)

    def test_all_ones_gives_zero(self) -> None:
        assert model_diversity(np.ones((4, 4))) == pytest.approx(0.0)

    def test_offdiagonal_variant(self) -> None:
        corr = np.array([[1.0, 0.5], [0.5, 1.0]])
        assert offdiagonal_diversity(corr) == pytest.approx(0.5)
        assert offdiagonal_diversity(np.eye(3)) == pytest.approx(1.0)
        assert offdiagonal_diversity(np.eye(1)) == 0.0

    def test_invariant_under_index_permutation(self, rng: np.random.Generator) -> None:
        corr = pearson_corr(ActivationSample(rng.standard_normal((30, 6)), 1))
        order = rng.permutation(6)
        assert model_diversity(corr[np.ix_(order, order)]) == pytest.approx(model_diversity(corr), abs=1e-12)

    def test_rejects_non_square(self) -> None:
        with pytest.raises(ShapeError):
            model_diversity(np.ones((2, 3)))

    def test_rejects_entries_outside_unit_interval(self) -> None:
        with pytest.raises(ValidationError):
            model_diversity(np.array([[1.0, 1.5], [1.5, 1.0]]))


class TestGroupDiversity:
    def test_three_channel_example(self) -> None:
        corr = np.array([[1.0, 0.9, 0.2], [0.9, 1.0, -0.4], [0.2, -0.4, 1.0]])
        partition = GroupPartition(groups=((0, 1), (2,)), names=("a", "b"))
        assert partition.normalizer == 4
        assert group_diversity(corr, partition) == pytest.approx(0.7)

    def test_single_group_is_fully_diverse(self) -> None:
        partition = GroupPartition(groups=((0, 1, 2),), names=("all",))
        assert group_diversity(np.ones((3, 3)), partition) == 1.0

    def test_invariant_under_within_group_permutation(self, rng: np.random.Generator) -> None:
        corr = pearson_corr(ActivationSample(rng.standard_normal((30, 6)), 1))
        partition = GroupPartition.contiguous((4, 2), ("fg", "bg"))
        order = np.array([2, 0, 3, 1, 5, 4])
        permuted = corr[np.ix_(order, order)]
        assert group_diversity(permuted, partition) == pytest.approx(group_diversity(corr, partition), abs=1e-12)

    def test_positive_rescaling_of_one_unit_changes_nothing(self, rng: np.random.Generator) -> None:
        partition = GroupPartition.contiguous((4, 2), ("fg", "bg"))
        for _ in range(50):
            values = rng.standard_normal((25, 6))
            scaled = values.copy()
            column = int(rng.integers(0, 6))
            scaled[:, column] *= float(rng.uniform(0.01, 100.0))
            before = pearson_corr(ActivationSample(values, 1))
            after = pearson_corr(ActivationSample(scaled, 1))
            assert model_diversity(after) == pytest.approx(model_diversity(before), abs=1e-12)
            assert group_diversity(after, partition) == pytest.approx(group_diversity(before, partition), abs=1e-12)

    def test_partition_size_must_match(self) -> None:
        partition = GroupPartition.contiguous((1, 1), ("a", "b"))
        with pytest.raises(ValidationError):
            group_diversity(np.eye(3), partition)

    def test_bounds_over_random_matrices(self, rng: np.random.Generator) -> None:
        for _ in range(10_000):
            c = int(rng.integers(2, 7))
            corr = pearson_corr(ActivationSample(rng.standard_normal((int(rng.integers(2, 9)), c)), 1))
            split = int(rng.integers(1, c))
            partition = GroupPartition.contiguous((split, c - split), ("fg", "bg"))
            zeta = model_diversity(corr)
            zeta_group = group_diversity(corr, partition)
            assert -1e-12 <= zeta <= 1.0 - 1.0 / c + 1e-12
            assert -1e-12 <= zeta_group <= 1.0 + 1e-12

    def test_report_bundles_every_measure(self) -> None:
        corr = np.array([[1.0, 0.9, 0.2], [0.9, 1.0, -0.4], [0.2, -0.4, 1.0]])
        report = diversity_report(corr, GroupPartition.contiguous((2, 1), ("fg", "bg")), layer_index=3)
        assert report.layer_index == 3
        assert report.zeta_group == pytest.approx(0.7)
        assert report.mean_abs_cross_corr == pytest.approx(0.3)
        assert report.mean_abs_within_corr == pytest.approx(0.9)
        assert set(report.as_csv_row()) == {
            "layer", "zeta", "zeta_group", "mean_abs_cross_corr", "mean_abs_within_corr", "zeta_offdiag",
        }


class TestProbes:
    def _samples(self, count: int = 6) -> list[SampleRecord]:
        return [make_record(index % 3, size=4, mask=centre_square(4, 1, 3), seed=index) for index in range(count)]

    def test_response_matrix_batches_and_averages(self) -> None:
        model = FakeExtractor()
        responses = response_matrix(model, 2, self._samples(5), batch_size=2)
        assert model.calls == [2, 2, 1]
        assert responses.values.shape == (5, 3)

    def test_final_layer_uses_model_partition(self) -> None:
        report = probe_layer(FakeExtractor(), self._samples())
        # channels 0 and 1 are affinely related
        assert report.correlation_matrix[0, 1] == pytest.approx(1.0)
        assert report.partition.names == ("foreground", "background")

    def test_inner_layer_defaults_to_one_group(self) -> None:
        report = probe_layer(FakeExtractor(), self._samples(), layer_index=1)
        assert report.partition.names == ("all",)
        assert report.zeta_group == 1.0

    def test_unknown_layer(self) -> None:
        with pytest.raises(NotFoundError):
            response_matrix(FakeExtractor(), 3, self._samples())

    def test_group_energy_splits_regions(self) -> None:
        samples = self._samples()
        energy = group_activation_energy(FakeExtractor(), samples, LayerShape(3, 4, 4, 2))
        images = np.stack([sample.image for sample in samples])
        inside = centre_square(4, 1, 3).astype(bool)
        red = images[:, 0]
        expected = np.mean(((red**2 + (2.0 * red + 1.0) ** 2) / 2.0)[:, inside])
        assert energy.samples == 6
        assert energy.fg_on_foreground == pytest.approx(expected)
        assert energy.bg_on_background == pytest.approx(np.mean((images[:, 1] ** 2)[:, ~inside]))

    def test_group_energy_needs_masks(self) -> None:
        with pytest.raises(ValidationError):
            group_activation_energy(FakeExtractor(), [make_record(0, size=4)], LayerShape(3, 4, 4, 2))
