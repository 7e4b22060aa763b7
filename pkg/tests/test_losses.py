"""Tests for the mask extractor, suppression term and classification losses."""

import numpy as np
import pytest

from gocnn_lab.core.losses import (
    extract,
    multilabel_logistic_loss,
    one_hot,
    softmax_cross_entropy,
    suppression_loss,
)
from gocnn_lab.core.models import Mask, MaskPolarity, MaskResolution
from gocnn_lab.core.tensor import Tape, constant, parameter
from gocnn_lab.errors import ShapeError, ValidationError


def feature_mask(data: np.ndarray) -> Mask:
    return Mask(data, MaskResolution.FEATURE, MaskPolarity.FOREGROUND)


class TestExtract:
    def test_identity_zero_and_complement_properties(self, rng: np.random.Generator) -> None:
        for _ in range(1000):
            h, w = rng.integers(1, 6, size=2)
            feature = constant(rng.standard_normal((1, int(rng.integers(1, 4)), h, w)))
            mask = feature_mask((rng.random((h, w)) < 0.5).astype(np.float64))
            np.testing.assert_array_equal(extract(feature, feature_mask(np.ones((h, w)))).data, feature.data)
            assert not extract(feature, feature_mask(np.zeros((h, w)))).data.any()
            complement = feature_mask(1.0 - mask.data)
            total = extract(feature, mask).data + extract(feature, complement).data
            np.testing.assert_allclose(total, feature.data, atol=0.0)

    def test_extract_is_idempotent(self, rng: np.random.Generator) -> None:
        for _ in range(100):
            h, w = (int(v) for v in rng.integers(1, 6, size=2))
            feature = constant(rng.standard_normal((2, int(rng.integers(1, 4)), h, w)))
            gate = (rng.random((2, h, w)) < 0.5).astype(np.float64)
            once = extract(feature, gate)
            np.testing.assert_array_equal(extract(once, gate).data, once.data)

    def test_gradient_vanishes_where_mask_is_zero(self, rng: np.random.Generator) -> None:
        feature = parameter(rng.standard_normal((2, 3, 4, 4)), "f")
        gate = (rng.random((2, 4, 4)) < 0.5).astype(np.float64)
        with Tape() as tape:
            loss = suppression_loss(feature, gate)
        grad = tape.backward(loss)[feature]
        assert not grad[np.broadcast_to(gate[:, None] == 0.0, grad.shape)].any()

    def test_resolution_mismatch_is_rejected(self) -> None:
        with pytest.raises(ShapeError, match="downsample"):
            extract(constant(np.zeros((1, 2, 4, 4))), feature_mask(np.ones((8, 8))))

    def test_per_sample_masks_need_matching_batch(self) -> None:
        with pytest.raises(ShapeError):
            extract(constant(np.zeros((2, 1, 2, 2))), np.ones((3, 2, 2)))

    def test_non_binary_mask_array(self) -> None:
        with pytest.raises(ValidationError):
            extract(constant(np.zeros((1, 1, 2, 2))), np.full((2, 2), 0.5))


class TestSuppressionLoss:
    def test_value_is_mean_of_masked_squares(self) -> None:
        feature = constant(np.arange(16.0).reshape(1, 1, 4, 4))
        gate = np.zeros((4, 4))
        gate[0, 0] = gate[3, 3] = 1.0
        assert suppression_loss(feature, gate).item() == pytest.approx((0.0 + 15.0**2) / 16)

    def test_ones_with_diagonal_mask(self) -> None:
        loss = suppression_loss(constant(np.ones((1, 1, 2, 2))), np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert loss.item() == pytest.approx(0.5, abs=1e-15)

    def test_loss_never_falls_as_mask_coverage_grows(self, rng: np.random.Generator) -> None:
        for _ in range(50):
            feature = constant(rng.standard_normal((2, 3, 4, 4)))
            gate = np.zeros((2, 4, 4))
            previous = suppression_loss(feature, gate).item()
            for flat in rng.permutation(gate.size):
                gate[np.unravel_index(flat, gate.shape)] = 1.0
                current = suppression_loss(feature, gate).item()
                assert current >= previous
                previous = current

    def test_zero_mask_gives_exact_zero(self, rng: np.random.Generator) -> None:
        feature = parameter(rng.standard_normal((2, 2, 3, 3)), "f")
        with Tape() as tape:
            loss = suppression_loss(feature, np.zeros((2, 3, 3)))
        assert loss.item() == 0.0
        assert not tape.backward(loss)[feature].any()


class TestClassificationLosses:
    def test_uniform_logits_give_log_k(self) -> None:
        assert softmax_cross_entropy(constant(np.zeros((4, 5))), [0, 1, 2, 3]).item() == pytest.approx(np.log(5))

    def test_cross_entropy_gradient_is_softmax_minus_target(self) -> None:
        logits = parameter([[1.0, 2.0, 0.5]], "z")
        with Tape() as tape:
            loss = softmax_cross_entropy(logits, [1])
        probabilities = np.exp(logits.data) / np.exp(logits.data).sum()
        np.testing.assert_allclose(tape.backward(loss)[logits], probabilities - [[0.0, 1.0, 0.0]])

    def test_cross_entropy_is_stable_for_large_logits(self) -> None:
        assert softmax_cross_entropy(constant([[1000.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_cross_entropy_reference_value(self) -> None:
        loss = softmax_cross_entropy(constant([[1.0, 2.0, 3.0]]), [2])
        assert loss.item() == pytest.approx(0.40760596444437, abs=1e-12)

    def test_cross_entropy_vanishes_at_large_margin(self) -> None:
        loss = softmax_cross_entropy(constant([[50.0, 0.0, 0.0]]), [0])
        assert 0.0 <= loss.item() < 1e-20

    def test_label_out_of_range(self) -> None:
        with pytest.raises(ValidationError):
            softmax_cross_entropy(constant(np.zeros((1, 3))), [3])

    def test_multilabel_at_zero_logits_is_log_two(self) -> None:
        loss = multilabel_logistic_loss(constant(np.zeros((2, 3))), one_hot([0, 2], 3))
        assert loss.item() == pytest.approx(np.log(2.0))

    def test_multilabel_reference_value(self) -> None:
        loss = multilabel_logistic_loss(constant([[1.0, -1.0]]), [[1.0, 0.0]])
        assert loss.item() == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-15)
        assert loss.item() == pytest.approx(0.3133, abs=1e-4)

    def test_multilabel_gradient(self) -> None:
        logits = parameter([[0.0, -3.0], [40.0, 2.0]], "z")
        targets = np.array([[1.0, 0.0], [1.0, 1.0]])
        with Tape() as tape:
            loss = multilabel_logistic_loss(logits, targets)
        expected = (1.0 / (1.0 + np.exp(-logits.data)) - targets) / 4
        np.testing.assert_allclose(tape.backward(loss)[logits], expected, atol=1e-15)

    def test_multilabel_rejects_non_binary_targets(self) -> None:
        with pytest.raises(ValidationError):
            multilabel_logistic_loss(constant(np.zeros((1, 2))), [[0.5, 0.5]])

    def test_one_hot(self) -> None:
        np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
