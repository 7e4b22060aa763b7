"""Representation diversity of a convolution layer.

Each convolutional function f_i is reduced to one scalar per sample (its
spatial mean) and functions are Pearson-correlated across samples. From the
c×c correlation matrix:

    ζ   = 1 − (1/c²) · Σ_{i,j} |corr[i, j]|                  (diagonal included)
    ζ_g = 1 − (1/Z)  · Σ_{s≠t} Σ_{i∈G_s, j∈G_t} |corr[i, j]|,  Z = Σ_{s≠t} |G_s|·|G_t|

A zero-variance (dead) function correlates 0 with everything, itself included.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from gocnn_lab.core.interfaces import IFeatureExtractor
from gocnn_lab.core.masks import feature_masks
from gocnn_lab.core.models import ActivationSample, DiversityReport, GroupPartition, LayerShape, SampleRecord
from gocnn_lab.core.tensor import FloatArray
from gocnn_lab.errors import NotFoundError, ShapeError, ValidationError
from gocnn_lab.observability import get_logger

logger = get_logger(__name__)

_CORR_TOLERANCE = 1e-9


def _stack_images(samples: Sequence[SampleRecord]) -> FloatArray:
    return np.stack([sample.image for sample in samples])


def response_matrix(
    model: IFeatureExtractor,
    layer_index: int,
    samples: Sequence[SampleRecord],
    batch_size: int = 128,
) -> ActivationSample:
    """Spatial-mean response of every function at a layer, one row per sample.

    Args:
        model: Feature extractor to probe.
        layer_index: 1-based convolution layer.
        samples: Evaluation samples, at least 2.
        batch_size: Images per forward pass.

    Raises:
        ValidationError: If fewer than 2 samples are given.
        NotFoundError: If the layer does not exist.
    """
    if len(samples) < 2:
        raise ValidationError(f"response_matrix needs at least 2 samples, got {len(samples)}")
    if not 1 <= layer_index <= model.num_layers:
        raise NotFoundError(f"layer {layer_index} does not exist (model has {model.num_layers})")
    rows = []
    for start in range(0, len(samples), batch_size):
        maps = model.layer_output(_stack_images(samples[start : start + batch_size]), layer_index)
        rows.append(maps.mean(axis=(2, 3)))
    return ActivationSample(values=np.concatenate(rows, axis=0), layer_index=layer_index)


def pearson_corr(responses: ActivationSample) -> FloatArray:
    """Pearson correlation between every pair of response columns.

    Returns:
        Symmetric c×c matrix with entries in [−1, 1]; unit diagonal except for dead columns.
    """
    values = responses.values
    centered = values - values.mean(axis=0, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=0))
    alive = (np.ptp(values, axis=0) > 0.0) & (norms > 0.0)
    safe = np.where(alive, norms, 1.0)
    unit = centered / safe
    corr = unit.T @ unit
    corr = 0.5 * (corr + corr.T)
    corr[~alive, :] = 0.0
    corr[:, ~alive] = 0.0
    np.clip(corr, -1.0, 1.0, out=corr)
    diagonal = np.arange(corr.shape[0])
    corr[diagonal[alive], diagonal[alive]] = 1.0
    return corr


def _check_corr(corr: FloatArray) -> None:
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or corr.shape[0] < 1:
        raise ShapeError("diversity", "correlation matrix must be square", [tuple(corr.shape)])
    if np.abs(corr).max() > 1.0 + _CORR_TOLERANCE:
        raise ValidationError("correlation entries must lie in [-1, 1]")


def model_diversity(corr: FloatArray) -> float:
    """ζ over all ordered pairs including i = j; lies in [0, 1 − 1/c] for unit diagonals."""
    _check_corr(corr)
    c = corr.shape[0]
    return float(1.0 - np.abs(corr).sum() / (c * c))


def offdiagonal_diversity(corr: FloatArray) -> float:
    """ζ with the diagonal terms removed: 1 − Σ_{i≠j}|corr| / (c(c−1))."""
    _check_corr(corr)
    c = corr.shape[0]
    if c < 2:
        return 0.0
    off = np.abs(corr).sum() - np.abs(np.diag(corr)).sum()
    return float(1.0 - off / (c * (c - 1)))


def _cross_group(partition: GroupPartition) -> FloatArray:
    owner = partition.labels()
    return owner[:, None] != owner[None, :]


def group_diversity(corr: FloatArray, partition: GroupPartition) -> float:
    """ζ_g over cross-group pairs, normalized by Z; lies in [0, 1].

    A single-group partition has no cross-group pairs and yields 1.0.

    Raises:
        ValidationError: If the partition does not cover exactly the matrix's indices.
    """
    _check_corr(corr)
    if partition.num_channels != corr.shape[0]:
        raise ValidationError(
            f"partition covers {partition.num_channels} channels but the matrix has {corr.shape[0]}"
        )
    normalizer = partition.normalizer
    if normalizer == 0:
        return 1.0
    cross = np.abs(corr)[_cross_group(partition)].sum()
    return float(1.0 - cross / normalizer)


def diversity_report(corr: FloatArray, partition: GroupPartition, layer_index: int) -> DiversityReport:
    """Bundle ζ, ζ without diagonal, ζ_g and mean |corr| across and within groups."""
    zeta_group = group_diversity(corr, partition)
    cross = _cross_group(partition)
    within = ~cross & ~np.eye(corr.shape[0], dtype=bool)
    magnitude = np.abs(corr)
    return DiversityReport(
        layer_index=layer_index,
        zeta=model_diversity(corr),
        zeta_offdiag=offdiagonal_diversity(corr),
        zeta_group=zeta_group,
        mean_abs_cross_corr=float(magnitude[cross].mean()) if cross.any() else 0.0,
        mean_abs_within_corr=float(magnitude[within].mean()) if within.any() else 0.0,
        correlation_matrix=corr,
        partition=partition,
    )


def probe_layer(
    model: IFeatureExtractor,
    samples: Sequence[SampleRecord],
    layer_index: int | None = None,
    partition: GroupPartition | None = None,
    batch_size: int = 128,
) -> DiversityReport:
    """Measure a layer's diversity on held-out samples.

    Args:
        model: Feature extractor to probe.
        samples: Evaluation samples.
        layer_index: 1-based layer; defaults to the final convolution layer.
        partition: Channel groups; defaults to the model's fg/bg partition, which
            only fits the final layer. Other layers default to a single group.
        batch_size: Images per forward pass.
    """
    layer = model.num_layers if layer_index is None else layer_index
    responses = response_matrix(model, layer, samples, batch_size)
    if partition is None:
        if layer == model.num_layers:
            partition = model.partition
        else:
            partition = GroupPartition(groups=(tuple(range(responses.num_functions)),), names=("all",))
    report = diversity_report(pearson_corr(responses), partition, layer)
    logger.info(
        "diversity_probed",
        layer=layer,
        samples=responses.num_samples,
        zeta=round(report.zeta, 6),
        zeta_group=round(report.zeta_group, 6),
    )
    return report


@dataclass(frozen=True)
class GroupEnergy:
    """Mean squared final-layer activation of each group inside each region."""

    fg_on_foreground: float
    fg_on_background: float
    bg_on_foreground: float
    bg_on_background: float
    samples: int

    @property
    def fg_separation(self) -> float:
        """Foreground-region energy of the fg group over its background-region energy."""
        if self.fg_on_background == 0.0:
            return float("inf") if self.fg_on_foreground > 0.0 else 1.0
        return self.fg_on_foreground / self.fg_on_background


def group_activation_energy(
    model: IFeatureExtractor,
    samples: Sequence[SampleRecord],
    feature_shape: LayerShape,
    batch_size: int = 128,
) -> GroupEnergy:
    """Mean squared activation of the fg and bg groups on foreground and background pixels.

    Only privileged samples contribute. Each value averages over the group's
    channels and over the region's feature-resolution pixels.

    Raises:
        ValidationError: If no sample carries a mask.
    """
    privileged = [sample for sample in samples if sample.has_privileged]
    if not privileged:
        raise ValidationError("group_activation_energy needs privileged samples")
    fg_idx = list(model.partition.group("foreground"))
    bg_idx = list(model.partition.group("background"))
    sums = np.zeros(4)
    counts = np.zeros(4)
    for start in range(0, len(privileged), batch_size):
        chunk = privileged[start : start + batch_size]
        maps = model.layer_output(_stack_images(chunk), model.num_layers)
        mask_f, mask_b = feature_masks(chunk, feature_shape)
        squared = maps * maps
        fg_energy = squared[:, fg_idx].mean(axis=1)
        bg_energy = squared[:, bg_idx].mean(axis=1)
        for slot, (energy, region) in enumerate(
            ((fg_energy, mask_f), (fg_energy, mask_b), (bg_energy, mask_f), (bg_energy, mask_b))
        ):
            sums[slot] += float(np.sum(energy * region))
            counts[slot] += float(region.sum())
    means = np.divide(sums, counts, out=np.zeros(4), where=counts > 0)
    return GroupEnergy(
        fg_on_foreground=float(means[0]),
        fg_on_background=float(means[1]),
        bg_on_foreground=float(means[2]),
        bg_on_background=float(means[3]),
        samples=len(privileged),
    )
