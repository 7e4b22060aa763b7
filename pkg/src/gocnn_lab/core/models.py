"""Domain models for gocnn-lab.

Value objects (dataclasses) for data flowing through the system, and pydantic
models for user-supplied configuration, validated on construction:
  - LayerShape, Mask, SampleRecord, GroupPartition: data and structure
  - StageSpec, LossWeights, GoCNNConfig, CorpusSpec, TrainConfig: configuration
  - LossBundle, MetricsRow, ActivationSample, DiversityReport: results
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gocnn_lab.core.tensor import FloatArray, Tensor
from gocnn_lab.errors import ValidationError

# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class MaskPolarity(str, Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"


class MaskResolution(str, Enum):
    IMAGE = "image"
    FEATURE = "feature"


class ClassificationMode(str, Enum):
    SOFTMAX = "softmax"
    MULTILABEL = "multilabel"


class TrainingMode(str, Enum):
    """Which heads and suppressors take part in training.

    GOCNN is the full model. GROUP_HEADS keeps the group classifiers but drops
    both suppressors. ONLY_FG / ONLY_BG block the opposite group's gradients.
    """

    GOCNN = "gocnn"
    ONLY_FG = "only_fg"
    ONLY_BG = "only_bg"
    VANILLA = "vanilla"
    GROUP_HEADS = "group_heads"

    @classmethod
    def _missing_(cls, value: object) -> TrainingMode | None:
        if value == "full":
            return cls.GOCNN
        return None


class BackgroundMode(str, Enum):
    INFORMATIVE = "informative"
    NOISE = "noise"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"


class Head(str, Enum):
    MAIN = "main"
    FG = "fg"
    BG = "bg"


# ---------------------------------------------------------------------------
# Structural values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerShape:
    """Spatial shape of one convolution layer's output (1-based ``layer_index``)."""

    channels: int
    height: int
    width: int
    layer_index: int

    def __post_init__(self) -> None:
        if min(self.channels, self.height, self.width) < 1:
            raise ValidationError(f"LayerShape dimensions must be >= 1, got {self}")


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary spatial mask with resolution and polarity tags.

    The all-zeros mask doubles as the no-privileged-information sentinel.
    """

    data: FloatArray
    resolution: MaskResolution
    polarity: MaskPolarity

    def __post_init__(self) -> None:
        array = np.array(self.data, dtype=np.float64, copy=True)
        if array.ndim != 2 or min(array.shape) < 1:
            raise ValidationError(f"Mask must be a non-empty 2-D array, got shape {array.shape}")
        if not np.isin(array, (0.0, 1.0)).all():
            raise ValidationError("Mask entries must be 0 or 1")
        array.flags.writeable = False
        object.__setattr__(self, "data", array)

    @classmethod
    def sentinel(cls, height: int, width: int, resolution: MaskResolution, polarity: MaskPolarity) -> Mask:
        return cls(np.zeros((height, width)), resolution, polarity)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.data.shape[0]), int(self.data.shape[1]))

    @property
    def is_sentinel(self) -> bool:
        return not self.data.any()

    def complement(self) -> Mask:
        """Opposite-polarity mask: 1 − data, except that the sentinel maps to the sentinel."""
        other = MaskPolarity.BACKGROUND if self.polarity is MaskPolarity.FOREGROUND else MaskPolarity.FOREGROUND
        if self.is_sentinel:
            return Mask(np.zeros_like(self.data), self.resolution, other)
        return Mask(1.0 - self.data, self.resolution, other)

    def same_as(self, other: Mask) -> bool:
        return (
            self.resolution is other.resolution
            and self.polarity is other.polarity
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """One labelled image with optional privileged foreground mask.

    Attributes:
        image: Float array [3, H, W] with values in [0, 1].
        label: Class index in [0, K).
        mask_fg: Image-resolution foreground mask, or the all-zeros sentinel.
        has_privileged: True exactly when ``mask_fg`` is not the sentinel.
    """

    image: FloatArray
    label: int
    mask_fg: Mask
    has_privileged: bool

    def __post_init__(self) -> None:
        image = np.array(self.image, dtype=np.float64, copy=True)
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValidationError(f"SampleRecord image must be [3, H, W], got {image.shape}")
        if image.min() < 0.0 or image.max() > 1.0:
            raise ValidationError("SampleRecord image values must lie in [0, 1]")
        if self.mask_fg.shape != image.shape[1:]:
            raise ValidationError(f"mask shape {self.mask_fg.shape} != image shape {image.shape[1:]}")
        if self.mask_fg.polarity is not MaskPolarity.FOREGROUND:
            raise ValidationError("SampleRecord.mask_fg must have foreground polarity")
        if self.label < 0:
            raise ValidationError(f"label must be non-negative, got {self.label}")
        if self.has_privileged == self.mask_fg.is_sentinel:
            raise ValidationError("has_privileged must be false exactly when mask_fg is the zero sentinel")
        image.flags.writeable = False
        object.__setattr__(self, "image", image)

    @property
    def mask_bg(self) -> Mask:
        return self.mask_fg.complement()

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])

    def same_as(self, other: SampleRecord) -> bool:
        return (
            self.label == other.label
            and self.has_privileged == other.has_privileged
            and np.array_equal(self.image, other.image)
            and self.mask_fg.same_as(other.mask_fg)
        )


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint assignment of channel indices to named groups.

    Attributes:
        groups: Index tuples G_1..G_m whose union is {0, …, c−1}.
        names: One name per group.
    """

    groups: tuple[tuple[int, ...], ...]
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.groups) < 1 or len(self.groups) != len(self.names):
            raise ValidationError("GroupPartition needs at least one group and one name per group")
        if any(len(group) == 0 for group in self.groups):
            raise ValidationError("GroupPartition groups must be non-empty")
        flat = list(itertools.chain.from_iterable(self.groups))
        if len(flat) != len(set(flat)):
            raise ValidationError("GroupPartition groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError("GroupPartition must cover channel indices 0..c-1 exactly")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("GroupPartition names must be unique")

    @classmethod
    def contiguous(cls, sizes: tuple[int, ...], names: tuple[str, ...]) -> GroupPartition:
        """Partition channels into consecutive blocks of the given sizes."""
        bounds = [0, *itertools.accumulate(sizes)]
        groups = tuple(tuple(range(start, stop)) for start, stop in itertools.pairwise(bounds))
        return cls(groups=groups, names=names)

    @property
    def num_channels(self) -> int:
        return sum(len(group) for group in self.groups)

    @property
    def normalizer(self) -> int:
        """Z = Σ_{s≠t} |G_s|·|G_t| over ordered pairs of distinct groups."""
        sizes = [len(group) for group in self.groups]
        return sum(a * b for (s, a), (t, b) in itertools.product(enumerate(sizes), repeat=2) if s != t)

    def group(self, name: str) -> tuple[int, ...]:
        try:
            return self.groups[self.names.index(name)]
        except ValueError as exc:
            raise ValidationError(f"unknown group {name!r}") from exc

    def labels(self) -> np.ndarray:
        """Group index for every channel."""
        owner = np.empty(self.num_channels, dtype=np.int64)
        for index, group in enumerate(self.groups):
            owner[list(group)] = index
        return owner


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class StageSpec(BaseModel):
    """One conv → ReLU (→ 2×2 average pool) stage below the final layer."""

    model_config = ConfigDict(frozen=True)

    out_channels: int = Field(ge=1)
    kernel: int = Field(default=3, ge=1)
    pad: int = Field(default=1, ge=0)
    pool: bool = True


class LossWeights(BaseModel):
    """Weights of total = w_main·main + w_fg·fg + w_bg·bg + w_sup·(sup_fg + sup_bg)."""

    model_config = ConfigDict(frozen=True)

    main: float = Field(default=1.0, ge=0.0)
    fg: float = Field(default=1.0, ge=0.0)
    bg: float = Field(default=1.0, ge=0.0)
    sup: float = Field(default=1.0, ge=0.0)


def _tinynet_stages() -> list[StageSpec]:
    return [StageSpec(out_channels=16), StageSpec(out_channels=32)]


class GoCNNConfig(BaseModel):
    """Architecture and loss wiring of a GoCNN.

    The default is TinyNet: conv3×3(16)-relu-pool2 → conv3×3(32)-relu-pool2 →
    conv3×3(64)-relu, with the final 64 channels split 48:16.
    """

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(ge=2)
    input_channels: int = Field(default=3, ge=1)
    image_size: int = Field(default=32, ge=1)
    stages: list[StageSpec] = Field(default_factory=_tinynet_stages)
    final_channels: int = Field(default=64, ge=2)
    final_kernel: int = Field(default=3, ge=1)
    group_ratio: tuple[int, int] = (3, 1)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    classification: ClassificationMode = ClassificationMode.SOFTMAX

    @model_validator(mode="after")
    def _check_split(self) -> GoCNNConfig:
        fg_part, bg_part = self.group_ratio
        if fg_part < 1 or bg_part < 1:
            raise ValueError("group_ratio parts must be >= 1")
        if self.final_channels % (fg_part + bg_part) != 0:
            raise ValueError(
                f"final_channels={self.final_channels} is not divisible by {fg_part + bg_part} "
                f"for group ratio {fg_part}:{bg_part}"
            )
        size = self.image_size
        for stage in self.stages:
            size = size + 2 * stage.pad - stage.kernel + 1
            if stage.pool:
                size //= 2
            if size < 1:
                raise ValueError("image_size is too small for the stage stack")
        if size + 2 * (self.final_kernel // 2) - self.final_kernel + 1 < 1:
            raise ValueError("image_size is too small for the final layer")
        return self

    @property
    def fg_channels(self) -> int:
        fg_part, bg_part = self.group_ratio
        return self.final_channels * fg_part // (fg_part + bg_part)

    @property
    def bg_channels(self) -> int:
        return self.final_channels - self.fg_channels

    @property
    def num_layers(self) -> int:
        return len(self.stages) + 1

    def partition(self) -> GroupPartition:
        return GroupPartition.contiguous((self.fg_channels, self.bg_channels), ("foreground", "background"))

    def layer_shapes(self) -> list[LayerShape]:
        """Output shape of every convolution layer (before pooling), 1-based."""
        shapes: list[LayerShape] = []
        size = self.image_size
        for index, stage in enumerate(self.stages, start=1):
            size = size + 2 * stage.pad - stage.kernel + 1
            shapes.append(LayerShape(stage.out_channels, size, size, index))
            if stage.pool:
                size //= 2
        final_pad = self.final_kernel // 2
        size = size + 2 * final_pad - self.final_kernel + 1
        shapes.append(LayerShape(self.final_channels, size, size, self.num_layers))
        return shapes

    def feature_shape(self) -> LayerShape:
        return self.layer_shapes()[-1]


class CorpusSpec(BaseModel):
    """Synthetic corpus request."""

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(ge=1, le=8)
    samples_per_class: int = Field(ge=1)
    image_size: int = Field(default=32, ge=8)
    privileged_fraction: float = Field(default=1.0, ge=0.0, le=1.0)
    background: BackgroundMode = BackgroundMode.INFORMATIVE
    texture_mixing: float = Field(default=0.3, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    split: Split = Split.TRAIN


class TrainConfig(BaseModel):
    """Training run request."""

    model_config = ConfigDict(frozen=True)

    corpus: Path
    val_corpus: Path | None = None
    model: GoCNNConfig
    output_dir: Path = Path("runs")
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=0.05, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    patience: int = Field(default=5, ge=1)
    min_delta: float = Field(default=0.002, ge=0.0)
    seed: int = Field(default=0, ge=0)
    mode: TrainingMode = TrainingMode.GOCNN
    foreground_only: bool = False
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class LossBundle:
    """Per-head losses of one training forward pass.

    Group heads that a mode does not use hold a constant zero tensor.
    """

    main: Tensor
    fg_cls: Tensor
    bg_cls: Tensor
    sup_fg: Tensor
    sup_bg: Tensor
    total: Tensor
    main_logits: Tensor
    fg_logits: Tensor | None = None
    bg_logits: Tensor | None = None

    def values(self) -> dict[str, float]:
        return {
            "main": self.main.item(),
            "fg": self.fg_cls.item(),
            "bg": self.bg_cls.item(),
            "sup_fg": self.sup_fg.item(),
            "sup_bg": self.sup_bg.item(),
            "total": self.total.item(),
        }


METRICS_COLUMNS: tuple[str, ...] = (
    "epoch", "split", "head", "top1", "loss_main", "loss_fg", "loss_bg",
    "loss_sup_fg", "loss_sup_bg", "zeta", "zeta_group", "seconds",
)

ABSENT = "absent"


@dataclass
class MetricsRow:
    """One metrics CSV row; ``top1 = None`` marks a head absent from the checkpoint."""

    epoch: int
    split: str
    head: Head
    top1: float | None
    loss_main: float | None = None
    loss_fg: float | None = None
    loss_bg: float | None = None
    loss_sup_fg: float | None = None
    loss_sup_bg: float | None = None
    zeta: float | None = None
    zeta_group: float | None = None
    seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.top1 is not None and not 0.0 <= self.top1 <= 1.0:
            raise ValidationError(f"top1 must lie in [0, 1], got {self.top1}")

    @property
    def absent(self) -> bool:
        return self.top1 is None

    def as_csv_row(self) -> dict[str, str]:
        def fmt(value: float | None) -> str:
            return "" if value is None else repr(float(value))

        return {
            "epoch": str(self.epoch),
            "split": self.split,
            "head": self.head.value,
            "top1": ABSENT if self.top1 is None else repr(float(self.top1)),
            "loss_main": fmt(self.loss_main),
            "loss_fg": fmt(self.loss_fg),
            "loss_bg": fmt(self.loss_bg),
            "loss_sup_fg": fmt(self.loss_sup_fg),
            "loss_sup_bg": fmt(self.loss_sup_bg),
            "zeta": fmt(self.zeta),
            "zeta_group": fmt(self.zeta_group),
            "seconds": f"{self.seconds:.3f}",
        }


@dataclass(frozen=True, eq=False)
class ActivationSample:
    """Per-function scalar responses: ``values[s, i]`` is the spatial mean of f_i on sample s."""

    values: FloatArray
    layer_index: int

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise ValidationError(f"ActivationSample needs at least 2 samples, got shape {self.values.shape}")

    @property
    def num_samples(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_functions(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True, eq=False)
class DiversityReport:
    """Diversity of one layer: ζ (all pairs), ζ without the diagonal, and ζ_g (cross-group pairs)."""

    layer_index: int
    zeta: float
    zeta_offdiag: float
    zeta_group: float
    mean_abs_cross_corr: float
    mean_abs_within_corr: float
    correlation_matrix: FloatArray
    partition: GroupPartition

    def as_csv_row(self) -> dict[str, str]:
        return {
            "layer": str(self.layer_index),
            "zeta": repr(self.zeta),
            "zeta_group": repr(self.zeta_group),
            "mean_abs_cross_corr": repr(self.mean_abs_cross_corr),
            "mean_abs_within_corr": repr(self.mean_abs_within_corr),
            "zeta_offdiag": repr(self.zeta_offdiag),
        }


@dataclass
class SummaryRow:
    """Mean ± std of main-head top-1 over seeds for one protocol setting."""

    setting: str
    mean_top1: float
    std_top1: float
    seeds: list[int] = field(default_factory=list)
    per_seed: list[float] = field(default_factory=list)
    extra: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_values(cls, setting: str, seeds: list[int], values: list[float]) -> SummaryRow:
        mean = float(np.mean(values)) if values else math.nan
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return cls(setting=setting, mean_top1=mean, std_top1=std, seeds=list(seeds), per_seed=list(values))


ModelT = TypeVar("ModelT", bound=BaseModel)


def validated(model_cls: type[ModelT], **data: Any) -> ModelT:
    """Construct a config model, reporting failures as this package's ValidationError."""
    try:
        return model_cls.model_validate(data)
    except pydantic.ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or model_cls.__name__}: {error['msg']}"
            for error in exc.errors()
        )
        raise ValidationError(f"invalid {model_cls.__name__}: {problems}") from exc
