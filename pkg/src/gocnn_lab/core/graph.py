"""GoCNN assembly: a plain conv stack whose final layer is split into groups.

Training wiring (full mode), for final-layer features F = [F_fg | F_bg]:

    F_fg ─┬─ extract(·, Mask_b) ─ suppressor            (sup_fg)
          ├─ pool ─ fg classifier                        (fg_cls)
          └─ pool ─┐
    F_bg ─┬─ extract(·, Mask_f) ─ suppressor            (sup_bg)
          ├─ pool ─ bg classifier                        (bg_cls)
          └─ pool ─┴─ concat ─ main classifier           (main)

The main path never sees masks. At test time suppressors and group classifiers
are dropped and concat-of-pools becomes one pool over all channels, which is a
standard CNN with the same parameters.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gocnn_lab.core.losses import multilabel_logistic_loss, one_hot, softmax_cross_entropy, suppression_loss
from gocnn_lab.core.masks import feature_masks
from gocnn_lab.core.models import (
    ClassificationMode,
    GoCNNConfig,
    GroupPartition,
    Head,
    LossBundle,
    LossWeights,
    SampleRecord,
    TrainingMode,
)
from gocnn_lab.core.ops import (
    avg_pool2d,
    channel_slice,
    concat,
    conv2d,
    fully_connected,
    global_avg_pool,
    relu,
    weighted_sum,
)
from gocnn_lab.core.tensor import FloatArray, Tensor, constant, parameter, stop_gradient
from gocnn_lab.errors import CheckpointFormatError, NotFoundError, ValidationError
from gocnn_lab.observability import get_logger

logger = get_logger(__name__)

MANIFEST_VERSION = "1"


@dataclass(frozen=True, eq=False)
class TrainingBatch:
    """Images, labels and feature-resolution masks for one step.

    Attributes:
        images: [B, 3, H, W].
        labels: Integer class indices [B].
        mask_fg: Foreground masks [B, h, w]; all zeros on non-privileged samples.
        mask_bg: Background masks [B, h, w]; all zeros on non-privileged samples.
    """

    images: FloatArray
    labels: npt.NDArray[np.int64]
    mask_fg: FloatArray
    mask_bg: FloatArray

    @property
    def size(self) -> int:
        return int(self.images.shape[0])


def make_batch(records: Sequence[SampleRecord], config: GoCNNConfig) -> TrainingBatch:
    """Collate records and bring their masks to the final layer's resolution.

    Raises:
        ValidationError: If the batch is empty or an image does not match the configured size.
    """
    if not records:
        raise ValidationError("make_batch: empty batch")
    images = np.stack([record.image for record in records])
    if images.shape[1:] != (config.input_channels, config.image_size, config.image_size):
        raise ValidationError(
            f"images of shape {images.shape[1:]} do not match the configured input "
            f"({config.input_channels}, {config.image_size}, {config.image_size})"
        )
    mask_fg, mask_bg = feature_masks(records, config.feature_shape())
    labels = np.array([record.label for record in records], dtype=np.int64)
    return TrainingBatch(images=images, labels=labels, mask_fg=mask_fg, mask_bg=mask_bg)


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> FloatArray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class GoCNNModel:
    """Shared parameter set of a GoCNN plus its partition.

    The model owns every tensor: backbone convolutions, main classifier, and
    both group classifiers. Views created with ``view`` select which of them a
    training mode uses, without copying anything.

    Args:
        config: Validated architecture.
        params: Named parameter tensors in canonical order.
        seed: Seed the parameters were initialised from.
    """

    def __init__(self, config: GoCNNConfig, params: dict[str, Tensor], seed: int) -> None:
        self._config = config
        self._params = params
        self._seed = seed
        self._partition = config.partition()

    @classmethod
    def build(cls, config: GoCNNConfig, seed: int) -> GoCNNModel:
        """Deterministically initialise a model (He-normal weights, zero biases).

        Every tensor is drawn from one generator in a fixed order, so two
        models built with the same seed agree bit for bit whatever mode they
        are later trained in.
        """
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        in_channels = config.input_channels
        for index, stage in enumerate(config.stages, start=1):
            fan_in = in_channels * stage.kernel * stage.kernel
            shape = (stage.out_channels, in_channels, stage.kernel, stage.kernel)
            params[f"conv{index}.weight"] = parameter(_he_normal(rng, shape, fan_in), f"conv{index}.weight")
            params[f"conv{index}.bias"] = parameter(np.zeros(stage.out_channels), f"conv{index}.bias")
            in_channels = stage.out_channels
        final = config.num_layers
        kernel = config.final_kernel
        shape = (config.final_channels, in_channels, kernel, kernel)
        params[f"conv{final}.weight"] = parameter(
            _he_normal(rng, shape, in_channels * kernel * kernel), f"conv{final}.weight"
        )
        params[f"conv{final}.bias"] = parameter(np.zeros(config.final_channels), f"conv{final}.bias")
        for head, width in (("main", config.final_channels), ("fg_head", config.fg_channels),
                            ("bg_head", config.bg_channels)):
            params[f"{head}.weight"] = parameter(
                _he_normal(rng, (config.num_classes, width), width), f"{head}.weight"
            )
            params[f"{head}.bias"] = parameter(np.zeros(config.num_classes), f"{head}.bias")
        logger.info(
            "model_built",
            seed=seed,
            final_channels=config.final_channels,
            fg_channels=config.fg_channels,
            bg_channels=config.bg_channels,
            parameters=count_parameters(list(params.values())),
        )
        return cls(config, params, seed)

    @property
    def config(self) -> GoCNNConfig:
        return self._config

    @property
    def partition(self) -> GroupPartition:
        return self._partition

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def num_layers(self) -> int:
        return self._config.num_layers

    @property
    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def backbone_names(self) -> list[str]:
        return [name for name in self._params if name.startswith("conv")]

    def head_names(self, head: str) -> list[str]:
        return [f"{head}.weight", f"{head}.bias"]

    def backbone(self, images: Tensor, upto: int | None = None) -> list[Tensor]:
        """Run the convolution stack.

        Args:
            images: Input [B, C, H, W].
            upto: Last 1-based layer to compute; defaults to the final layer.

        Returns:
            Post-ReLU output of each computed layer, before any pooling.
        """
        last = self.num_layers if upto is None else upto
        outputs: list[Tensor] = []
        x = images
        for index, stage in enumerate(self._config.stages, start=1):
            if index > last:
                return outputs
            x = relu(conv2d(x, self._params[f"conv{index}.weight"], self._params[f"conv{index}.bias"], 1, stage.pad))
            outputs.append(x)
            if stage.pool:
                x = avg_pool2d(x, 2)
        final = self.num_layers
        if last >= final:
            pad = self._config.final_kernel // 2
            outputs.append(relu(conv2d(x, self._params[f"conv{final}.weight"], self._params[f"conv{final}.bias"],
                                       1, pad)))
        return outputs

    def layer_output(self, images: FloatArray, layer_index: int) -> FloatArray:
        """Feature maps f^(k)(x) of one layer, computed without recording gradients."""
        if not 1 <= layer_index <= self.num_layers:
            raise NotFoundError(f"layer {layer_index} does not exist (model has {self.num_layers})")
        return self.backbone(constant(images), upto=layer_index)[-1].numpy()

    def view(self, mode: TrainingMode, loss_weights: LossWeights | None = None) -> GoCNNView:
        return GoCNNView(self, mode, loss_weights or self._config.loss_weights)

    def load_arrays(self, arrays: dict[str, FloatArray]) -> None:
        """Overwrite parameters from named arrays; unknown names are rejected."""
        for name, array in arrays.items():
            if name not in self._params:
                raise CheckpointFormatError(f"checkpoint tensor {name!r} does not belong to this architecture")
            self._params[name].assign(array)


class GoCNNView:
    """One training mode's wiring over a GoCNNModel's parameters.

    Args:
        model: The parameter owner.
        mode: Which heads and suppressors participate.
        loss_weights: Weights of the total loss.
    """

    def __init__(self, model: GoCNNModel, mode: TrainingMode, loss_weights: LossWeights) -> None:
        self._model = model
        self._mode = mode
        self._weights = loss_weights
        config = model.config
        if mode is TrainingMode.ONLY_FG:
            self._main_head, self._main_channels = "fg_head", (0, config.fg_channels)
        elif mode is TrainingMode.ONLY_BG:
            self._main_head, self._main_channels = "bg_head", (config.fg_channels, config.final_channels)
        else:
            self._main_head, self._main_channels = "main", (0, config.final_channels)

    @property
    def model(self) -> GoCNNModel:
        return self._model

    @property
    def mode(self) -> TrainingMode:
        return self._mode

    @property
    def loss_weights(self) -> LossWeights:
        return self._weights

    @property
    def partition(self) -> GroupPartition:
        return self._model.partition

    @property
    def num_layers(self) -> int:
        return self._model.num_layers

    @property
    def main_input_width(self) -> int:
        start, stop = self._main_channels
        return stop - start

    def layer_output(self, images: FloatArray, layer_index: int) -> FloatArray:
        return self._model.layer_output(images, layer_index)

    def head_params(self) -> dict[Head, str]:
        """Parameter prefix serving each head in this mode; absent heads are omitted."""
        if self._mode is TrainingMode.VANILLA:
            return {Head.MAIN: "main"}
        if self._mode is TrainingMode.ONLY_FG:
            return {Head.MAIN: "fg_head", Head.FG: "fg_head", Head.BG: "bg_head"}
        if self._mode is TrainingMode.ONLY_BG:
            return {Head.MAIN: "bg_head", Head.FG: "fg_head", Head.BG: "bg_head"}
        return {Head.MAIN: "main", Head.FG: "fg_head", Head.BG: "bg_head"}

    def parameters(self) -> list[Tensor]:
        """Tensors trained in this mode, in canonical order."""
        params = self._model.parameters
        prefixes = set(self.head_params().values())
        names = self._model.backbone_names() + [
            name for prefix in ("main", "fg_head", "bg_head") if prefix in prefixes
            for name in self._model.head_names(prefix)
        ]
        return [params[name] for name in names]

    def test_parameters(self) -> list[Tensor]:
        """Tensors of the test-time graph: backbone plus the main classifier."""
        params = self._model.parameters
        names = self._model.backbone_names() + self._model.head_names(self._main_head)
        return [params[name] for name in names]

    def _classification_loss(self, logits: Tensor, labels: npt.NDArray[np.int64]) -> Tensor:
        if self._model.config.classification is ClassificationMode.MULTILABEL:
            return multilabel_logistic_loss(logits, one_hot(labels, self._model.config.num_classes))
        return softmax_cross_entropy(logits, labels)

    def _classify(self, pooled: Tensor, head: str) -> Tensor:
        params = self._model.parameters
        return fully_connected(pooled, params[f"{head}.weight"], params[f"{head}.bias"])

    def forward_train(self, batch: TrainingBatch | Sequence[SampleRecord]) -> LossBundle:
        """Compute every head's loss and the weighted total on the active tape.

        Args:
            batch: A collated batch, or records to collate.

        Returns:
            The per-head losses, their weighted total, and the head logits.

        Raises:
            ShapeError: If masks do not match the final layer's resolution.
        """
        if not isinstance(batch, TrainingBatch):
            batch = make_batch(batch, self._model.config)
        config = self._model.config
        weights = self._weights
        features = self._model.backbone(constant(batch.images))[-1]
        fg_part = channel_slice(features, 0, config.fg_channels)
        bg_part = channel_slice(features, config.fg_channels, config.final_channels)
        zero = constant(0.0)
        labels = batch.labels

        if self._mode is TrainingMode.VANILLA:
            main_logits = self._classify(global_avg_pool(features), "main")
            main = self._classification_loss(main_logits, labels)
            total = weighted_sum([(weights.main, main)])
            return LossBundle(main=main, fg_cls=zero, bg_cls=zero, sup_fg=zero, sup_bg=zero,
                              total=total, main_logits=main_logits)

        if self._mode in (TrainingMode.GOCNN, TrainingMode.GROUP_HEADS):
            fg_pooled = global_avg_pool(fg_part)
            bg_pooled = global_avg_pool(bg_part)
            main_logits = self._classify(concat([fg_pooled, bg_pooled], axis=1), "main")
            fg_logits = self._classify(fg_pooled, "fg_head")
            bg_logits = self._classify(bg_pooled, "bg_head")
            main = self._classification_loss(main_logits, labels)
            fg_cls = self._classification_loss(fg_logits, labels)
            bg_cls = self._classification_loss(bg_logits, labels)
            terms = [(weights.main, main), (weights.fg, fg_cls), (weights.bg, bg_cls)]
            if self._mode is TrainingMode.GOCNN:
                sup_fg = suppression_loss(fg_part, batch.mask_bg)
                sup_bg = suppression_loss(bg_part, batch.mask_fg)
                terms += [(weights.sup, sup_fg), (weights.sup, sup_bg)]
            else:
                sup_fg = sup_bg = zero
            return LossBundle(main=main, fg_cls=fg_cls, bg_cls=bg_cls, sup_fg=sup_fg, sup_bg=sup_bg,
                              total=weighted_sum(terms), main_logits=main_logits,
                              fg_logits=fg_logits, bg_logits=bg_logits)

        # ONLY_FG / ONLY_BG: the kept group's classifier is the main classifier;
        # the other group's heads see gradient-stopped features.
        keep_fg = self._mode is TrainingMode.ONLY_FG
        kept, blocked = (fg_part, stop_gradient(bg_part)) if keep_fg else (bg_part, stop_gradient(fg_part))
        kept_head, blocked_head = ("fg_head", "bg_head") if keep_fg else ("bg_head", "fg_head")
        main_logits = self._classify(global_avg_pool(kept), kept_head)
        blocked_logits = self._classify(global_avg_pool(blocked), blocked_head)
        main = self._classification_loss(main_logits, labels)
        blocked_cls = self._classification_loss(blocked_logits, labels)
        if keep_fg:
            sup_kept = suppression_loss(kept, batch.mask_bg)
            sup_blocked = suppression_loss(blocked, batch.mask_fg)
        else:
            sup_kept = suppression_loss(kept, batch.mask_fg)
            sup_blocked = suppression_loss(blocked, batch.mask_bg)
        blocked_weight = weights.bg if keep_fg else weights.fg
        total = weighted_sum([(weights.main, main), (blocked_weight, blocked_cls), (weights.sup, sup_kept)])
        if keep_fg:
            return LossBundle(main=main, fg_cls=main, bg_cls=blocked_cls, sup_fg=sup_kept, sup_bg=sup_blocked,
                              total=total, main_logits=main_logits, fg_logits=main_logits,
                              bg_logits=blocked_logits)
        return LossBundle(main=main, fg_cls=blocked_cls, bg_cls=main, sup_fg=sup_blocked, sup_bg=sup_kept,
                          total=total, main_logits=main_logits, fg_logits=blocked_logits,
                          bg_logits=main_logits)

    def forward_test(self, images: FloatArray) -> Tensor:
        """Test-time logits: one global pool over the main classifier's channels, then the main classifier.

        No masks and no group heads are involved.
        """
        features = self._model.backbone(constant(images))[-1]
        start, stop = self._main_channels
        if (start, stop) != (0, self._model.config.final_channels):
            features = channel_slice(features, start, stop)
        return self._classify(global_avg_pool(features), self._main_head)

    def head_logits(self, images: FloatArray) -> dict[Head, FloatArray]:
        """Logits of every head present in this mode, computed in one backbone pass."""
        config = self._model.config
        features = self._model.backbone(constant(images))[-1]
        channels = {
            "main": (0, config.final_channels),
            "fg_head": (0, config.fg_channels),
            "bg_head": (config.fg_channels, config.final_channels),
        }
        channels[self._main_head] = self._main_channels
        pooled = global_avg_pool(features).data
        out: dict[Head, FloatArray] = {}
        for head, prefix in self.head_params().items():
            start, stop = channels[prefix]
            out[head] = self._classify(constant(pooled[:, start:stop]), prefix).numpy()
        return out

    def manifest(self) -> dict[str, str]:
        """Plain-text description stored next to a checkpoint."""
        config = self._model.config
        partition = self._model.partition
        bounds = ",".join(f"{name}:{min(group)}:{max(group) + 1}"
                          for name, group in zip(partition.names, partition.groups, strict=True))
        return {
            "format_version": MANIFEST_VERSION,
            "architecture": config.model_dump_json(),
            "mode": self._mode.value,
            "seed": str(self._model.seed),
            "num_classes": str(config.num_classes),
            "classification": config.classification.value,
            "partition": bounds,
            "loss_weights": self._weights.model_dump_json(),
            "heads": ",".join(head.value for head in self.head_params()),
        }

    def state(self) -> dict[str, FloatArray]:
        """Named arrays of every trained tensor, for checkpointing."""
        return {str(tensor.name): tensor.numpy() for tensor in self.parameters()}


def count_parameters(tensors: Sequence[Tensor]) -> int:
    return sum(tensor.size for tensor in tensors)


def view_from_checkpoint(arrays: dict[str, FloatArray], manifest: dict[str, str]) -> GoCNNView:
    """Rebuild a view from checkpoint tensors and manifest.

    Raises:
        CheckpointFormatError: If the manifest is incomplete or tensors do not fit.
    """
    try:
        config = GoCNNConfig.model_validate_json(manifest["architecture"])
        mode = TrainingMode(manifest["mode"])
        seed = int(manifest["seed"])
        weights = LossWeights.model_validate_json(manifest["loss_weights"])
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"checkpoint manifest is incomplete or invalid: {exc}") from exc
    model = GoCNNModel.build(config, seed)
    model.load_arrays(arrays)
    view = model.view(mode, weights)
    expected = {str(tensor.name) for tensor in view.parameters()}
    missing = expected - set(arrays)
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing tensors: {sorted(missing)}")
    return view

