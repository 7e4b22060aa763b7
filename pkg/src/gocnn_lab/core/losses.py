"""Mask extractor, suppression term, and classification losses.

The suppression term is the squared Frobenius norm of the extracted responses
averaged over batch, channels and positions:

    L_sup = 1/(B·G·h·w) · Σ_b Σ_g ‖ F[b, g] ⊙ M_b ‖²_F

Masks are constants. A sample whose opposing mask is all zeros contributes
exactly 0 to the value and to every gradient.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from gocnn_lab.core.models import Mask
from gocnn_lab.core.ops import multiply_constant, sum_of_squares
from gocnn_lab.core.tensor import FloatArray, Tensor, record_op
from gocnn_lab.errors import ShapeError, ValidationError

MaskInput = Mask | Sequence[Mask] | FloatArray


def mask_array(mask: MaskInput) -> FloatArray:
    """Normalize a mask argument to an array of shape [h, w] or [B, h, w]."""
    if isinstance(mask, Mask):
        return mask.data
    if isinstance(mask, np.ndarray):
        array = np.asarray(mask, dtype=np.float64)
    else:
        array = np.stack([item.data for item in mask])
    if array.ndim not in (2, 3):
        raise ShapeError("extract", "mask must be [h, w] or [B, h, w]", [tuple(array.shape)])
    if not np.isin(array, (0.0, 1.0)).all():
        raise ValidationError("extract: mask entries must be 0 or 1")
    return array


def extract(feature: Tensor, mask: MaskInput) -> Tensor:
    """Gate feature maps with a binary mask: ``out[b, c] = feature[b, c] ⊙ mask[b]``.

    Args:
        feature: Feature maps [B, C, h, w].
        mask: One mask for the whole batch ([h, w] or Mask), or one per sample ([B, h, w]).

    Returns:
        Masked feature maps, same shape as ``feature``.

    Raises:
        ShapeError: If the mask resolution or batch size does not match the features.
    """
    if feature.ndim != 4:
        raise ShapeError("extract", "feature must be [B, C, h, w]", [feature.shape])
    gate = mask_array(mask)
    spatial = feature.shape[2:]
    if gate.shape[-2:] != spatial:
        raise ShapeError(
            "extract",
            f"mask resolution {gate.shape[-2:]} does not match feature resolution {spatial}; downsample first",
            [feature.shape, tuple(gate.shape)],
        )
    if gate.ndim == 3:
        if gate.shape[0] != feature.shape[0]:
            raise ShapeError("extract", "one mask per sample is required", [feature.shape, tuple(gate.shape)])
        gate = gate[:, None, :, :]
    return multiply_constant(feature, gate)


def suppression_loss(features: Tensor, opposing_mask: MaskInput) -> Tensor:
    """Regression-to-zero penalty on a group's responses inside the opposing region.

    Args:
        features: One group's feature maps [B, G, h, w].
        opposing_mask: Mask_b for the foreground group, Mask_f for the background group;
            per sample ([B, h, w]) or shared ([h, w]).

    Returns:
        Scalar loss, 0 exactly when every opposing mask is all zeros.
    """
    extracted = extract(features, opposing_mask)
    return sum_of_squares(extracted, scale=1.0 / features.size)


def softmax_cross_entropy(logits: Tensor, labels: npt.ArrayLike) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Args:
        logits: Scores [B, K].
        labels: Integer class indices [B] in [0, K).

    Raises:
        ShapeError: If shapes disagree.
        ValidationError: If a label is out of range.
    """
    label_array = np.asarray(labels)
    if logits.ndim != 2 or label_array.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", "need logits [B, K] and labels [B]",
                         [logits.shape, tuple(label_array.shape)])
    batch, num_classes = logits.shape
    if not np.issubdtype(label_array.dtype, np.integer) or label_array.min() < 0 or label_array.max() >= num_classes:
        raise ValidationError(f"softmax_cross_entropy: labels must be integers in [0, {num_classes})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    partition = exp.sum(axis=1)
    rows = np.arange(batch)
    loss = np.mean(np.log(partition) - shifted[rows, label_array])
    probabilities = exp / partition[:, None]

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        delta = probabilities.copy()
        delta[rows, label_array] -= 1.0
        return (grad.item() * delta / batch,)

    return record_op("softmax_cross_entropy", np.asarray(loss), (logits,), backward)


def multilabel_logistic_loss(logits: Tensor, targets: npt.ArrayLike) -> Tensor:
    """Mean binary cross-entropy over all B·K logits, in softplus form.

    Args:
        logits: Scores [B, K].
        targets: Binary targets [B, K].

    Raises:
        ShapeError: If shapes disagree.
        ValidationError: If a target is not 0 or 1.
    """
    target_array = np.asarray(targets, dtype=np.float64)
    if logits.ndim != 2 or target_array.shape != logits.shape:
        raise ShapeError("multilabel_logistic_loss", "targets must match logits", [logits.shape, target_array.shape])
    if not np.isin(target_array, (0.0, 1.0)).all():
        raise ValidationError("multilabel_logistic_loss: targets must be binary")

    z = logits.data
    # softplus(z) − t·z, stable for large |z|
    elementwise = np.maximum(z, 0.0) - target_array * z + np.log1p(np.exp(-np.abs(z)))
    loss = elementwise.mean()
    positive = z >= 0.0
    exp_neg_abs = np.exp(-np.abs(z))
    sigmoid = np.where(positive, 1.0 / (1.0 + exp_neg_abs), exp_neg_abs / (1.0 + exp_neg_abs))

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad.item() * (sigmoid - target_array) / z.size,)

    return record_op("multilabel_logistic_loss", np.asarray(loss), (logits,), backward)


def one_hot(labels: npt.ArrayLike, num_classes: int) -> FloatArray:
    """Binary target matrix [B, K] with a single 1 per row."""
    label_array = np.asarray(labels, dtype=np.int64)
    targets = np.zeros((label_array.shape[0], num_classes), dtype=np.float64)
    targets[np.arange(label_array.shape[0]), label_array] = 1.0
    return targets
