"""Business logic services for gocnn-lab.

Services contain all experiment logic. They:
  - Accept stores and sinks via constructor injection
  - Read corpora and checkpoints only through the ICorpusStore / ICheckpointStore interfaces
  - Raise gocnn_lab.errors domain errors, which the CLI maps to exit codes
  - Never print; results are returned, progress is logged

Training is single-threaded and every random draw is seeded, so a run with a
fixed seed reproduces its metrics CSV byte for byte when wall time is off.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gocnn_lab.core.diversity import GroupEnergy, group_activation_energy, probe_layer
from gocnn_lab.core.graph import GoCNNModel, GoCNNView, make_batch, view_from_checkpoint
from gocnn_lab.core.interfaces import (
    ICheckpointStore,
    ICorpusStore,
    ICorpusSynthesizer,
    IDiversityExporter,
    IFeatureExtractor,
    IHeatmapWriter,
    IMetricsSink,
)
from gocnn_lab.core.models import (
    CorpusSpec,
    DiversityReport,
    Head,
    MetricsRow,
    SampleRecord,
    Split,
    SummaryRow,
    TrainConfig,
    TrainingMode,
)
from gocnn_lab.core.optim import SGD, PlateauScheduler
from gocnn_lab.core.privileged import assign_privileged, foreground_only
from gocnn_lab.core.tensor import FloatArray, Tape
from gocnn_lab.errors import DataError, NumericError, ValidationError
from gocnn_lab.observability import get_logger
from gocnn_lab.settings import Settings, get_settings

logger = get_logger(__name__)

CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.csv"

_LOSS_KEYS = ("main", "fg", "bg", "sup_fg", "sup_bg")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def holdout_split(records: Sequence[SampleRecord], fraction: float) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Hold out the last ``fraction`` of every class, keeping file order within each side.

    Each class keeps at least one training sample and gives at least one
    held-out sample when it has two or more.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"holdout fraction must lie in (0, 1), got {fraction}")
    positions: dict[int, list[int]] = {}
    for index, record in enumerate(records):
        positions.setdefault(record.label, []).append(index)
    held: set[int] = set()
    for members in positions.values():
        count = len(members)
        take = min(max(math.floor(fraction * count + 0.5), 1), count - 1) if count > 1 else 0
        held.update(members[count - take :])
    train = [record for index, record in enumerate(records) if index not in held]
    val = [record for index, record in enumerate(records) if index in held]
    return train, val


@dataclass
class Score:
    """Accuracy of every present head and mean losses over a record set."""

    top1: dict[Head, float]
    losses: dict[str, float]
    samples: int


def score_view(view: GoCNNView, records: Sequence[SampleRecord], batch_size: int) -> Score:
    """Single-pass evaluation of every head present in ``view``; no gradients are recorded."""
    if not records:
        raise ValidationError("cannot score an empty record set")
    heads = list(view.head_params())
    correct = dict.fromkeys(heads, 0)
    totals = dict.fromkeys(_LOSS_KEYS, 0.0)
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        batch = make_batch(chunk, view.model.config)
        bundle = view.forward_train(batch)
        logits = {Head.MAIN: bundle.main_logits, Head.FG: bundle.fg_logits, Head.BG: bundle.bg_logits}
        for head in heads:
            head_logits = logits[head]
            if head_logits is not None:
                correct[head] += int(np.sum(np.argmax(head_logits.data, axis=1) == batch.labels))
        for key, value in bundle.values().items():
            if key in totals:
                totals[key] += value * batch.size
    count = len(records)
    return Score(
        top1={head: correct[head] / count for head in heads},
        losses={key: total / count for key, total in totals.items()},
        samples=count,
    )


def _metrics_row(
    epoch: int,
    split: str,
    head: Head,
    top1: float | None,
    losses: dict[str, float],
    zeta: float | None,
    zeta_group: float | None,
    seconds: float,
) -> MetricsRow:
    return MetricsRow(
        epoch=epoch,
        split=split,
        head=head,
        top1=top1,
        loss_main=losses.get("main"),
        loss_fg=losses.get("fg"),
        loss_bg=losses.get("bg"),
        loss_sup_fg=losses.get("sup_fg"),
        loss_sup_bg=losses.get("sup_bg"),
        zeta=zeta,
        zeta_group=zeta_group,
        seconds=seconds,
    )


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


class CorpusService:
    """Generates, stores and loads synthetic corpora.

    Args:
        store: Corpus persistence.
        synthesizer: Shape renderer.
    """

    def __init__(self, store: ICorpusStore, synthesizer: ICorpusSynthesizer) -> None:
        self._store = store
        self._synthesizer = synthesizer

    def generate(self, spec: CorpusSpec, out: Path | None = None) -> list[SampleRecord]:
        """Render a corpus and, when ``out`` is given, write it."""
        records = self._synthesizer.generate(spec)
        if out is not None:
            self._store.write(records, out, spec.num_classes)
        return records

    def generate_validation(self, spec: CorpusSpec, per_class: int, out: Path) -> list[SampleRecord]:
        """Render the held-out companion of ``spec``: independent images, masks on every sample."""
        val_spec = spec.model_copy(
            update={"split": Split.VAL, "samples_per_class": per_class, "privileged_fraction": 1.0}
        )
        return self.generate(val_spec, out)

    def load(self, path: Path) -> tuple[list[SampleRecord], int]:
        return self._store.read(path)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    """Outcome of one training run."""

    view: GoCNNView
    checkpoint: Path
    metrics_path: Path | None
    best_epoch: int
    best_top1: float
    final_top1: float
    rows: list[MetricsRow] = field(default_factory=list)
    suppression_history: list[tuple[float, float]] = field(default_factory=list)


class TrainingService:
    """Runs SGD training with a validation-plateau schedule.

    Args:
        corpus_store: Source of training and validation corpora.
        checkpoint_store: Destination of the best-validation checkpoint.
        sink_factory: Builds the metrics sink for a run's CSV path.
        settings: Harness defaults; the process settings when omitted.
    """

    def __init__(
        self,
        corpus_store: ICorpusStore,
        checkpoint_store: ICheckpointStore,
        sink_factory: Callable[[Path], IMetricsSink],
        settings: Settings | None = None,
    ) -> None:
        self._corpus_store = corpus_store
        self._checkpoint_store = checkpoint_store
        self._settings = settings or get_settings()
        self._sink_factory = sink_factory

    def load_data(self, config: TrainConfig) -> tuple[list[SampleRecord], list[SampleRecord]]:
        """Read the training corpus and its validation set, checking K against the model.

        Raises:
            ValidationError: If a corpus's class count or image size disagrees with the model.
        """
        records, num_classes = self._corpus_store.read(config.corpus)
        self._check_corpus(records, num_classes, config)
        if config.val_corpus is not None:
            val_records, val_classes = self._corpus_store.read(config.val_corpus)
            self._check_corpus(val_records, val_classes, config)
            return records, val_records
        return holdout_split(records, config.val_fraction)

    @staticmethod
    def _check_corpus(records: Sequence[SampleRecord], num_classes: int, config: TrainConfig) -> None:
        if num_classes != config.model.num_classes:
            raise ValidationError(
                f"corpus has {num_classes} classes but the model is configured for {config.model.num_classes}"
            )
        size = config.model.image_size
        if records and (records[0].height, records[0].width) != (size, size):
            raise ValidationError(
                f"corpus images are {records[0].height}x{records[0].width} but the model expects {size}x{size}"
            )

    def train(
        self,
        config: TrainConfig,
        train_records: Sequence[SampleRecord] | None = None,
        val_records: Sequence[SampleRecord] | None = None,
        write_metrics: bool = True,
    ) -> TrainResult:
        """Train one model and save its best-validation checkpoint.

        Args:
            config: Run description.
            train_records: Pre-loaded training records; read from ``config.corpus`` when omitted.
            val_records: Pre-loaded validation records; required with ``train_records``.
            write_metrics: Write ``metrics.csv`` into the output directory.

        Returns:
            The trained view, checkpoint path and per-epoch rows.

        Raises:
            ValidationError: On a corpus/model mismatch, before any step is taken.
            NumericError: If a loss or update becomes non-finite; rows written so far stay on disk.
        """
        if train_records is None:
            train, val = self.load_data(config)
        else:
            if val_records is None:
                raise ValidationError("val_records must accompany train_records")
            train, val = list(train_records), list(val_records)
        if len(val) < 2:
            raise ValidationError(f"validation needs at least 2 samples, got {len(val)}")
        if config.foreground_only:
            train = foreground_only(train)

        settings = self._settings
        model = GoCNNModel.build(config.model, config.seed)
        view = model.view(config.mode)
        params = view.parameters()
        optimizer = SGD(params, lr=config.learning_rate, momentum=config.momentum, weight_decay=config.weight_decay)
        scheduler = PlateauScheduler(optimizer, patience=config.patience, min_delta=config.min_delta,
                                     factor=settings.plateau_factor)
        output_dir = config.output_dir
        checkpoint = output_dir / CHECKPOINT_NAME
        metrics_path = output_dir / METRICS_NAME if write_metrics else None
        sink = self._sink_factory(metrics_path) if metrics_path is not None else None
        result = TrainResult(view=view, checkpoint=checkpoint, metrics_path=metrics_path,
                             best_epoch=0, best_top1=-1.0, final_top1=0.0)
        logger.info(
            "training_started",
            mode=config.mode.value,
            seed=config.seed,
            train_samples=len(train),
            val_samples=len(val),
            epochs=config.epochs,
            batch_size=config.batch_size,
        )
        try:
            for epoch in range(1, config.epochs + 1):
                self._run_epoch(config, view, optimizer, train, val, epoch, sink, result)
                scheduler.observe(result.final_top1, epoch)
        except NumericError:
            logger.error("training_diverged", mode=config.mode.value, seed=config.seed, lr=optimizer.lr)
            raise
        finally:
            if sink is not None:
                sink.close()
        logger.info("training_finished", best_epoch=result.best_epoch, best_top1=result.best_top1,
                    checkpoint=str(checkpoint))
        return result

    def _run_epoch(
        self,
        config: TrainConfig,
        view: GoCNNView,
        optimizer: SGD,
        train: list[SampleRecord],
        val: list[SampleRecord],
        epoch: int,
        sink: IMetricsSink | None,
        result: TrainResult,
    ) -> None:
        started = time.perf_counter()
        params = view.parameters()
        heads = list(view.head_params())
        order = np.random.default_rng(np.random.SeedSequence([config.seed, epoch])).permutation(len(train))
        totals = dict.fromkeys(_LOSS_KEYS, 0.0)
        correct = dict.fromkeys(heads, 0)
        for start in range(0, len(train), config.batch_size):
            batch = make_batch([train[i] for i in order[start : start + config.batch_size]], config.model)
            with Tape() as tape:
                bundle = view.forward_train(batch)
            grads = tape.backward(bundle.total, wrt=params)
            optimizer.step(grads)
            for key, value in bundle.values().items():
                if key in totals:
                    totals[key] += value * batch.size
            logits = {Head.MAIN: bundle.main_logits, Head.FG: bundle.fg_logits, Head.BG: bundle.bg_logits}
            for head in heads:
                head_logits = logits[head]
                if head_logits is not None:
                    correct[head] += int(np.sum(np.argmax(head_logits.data, axis=1) == batch.labels))
        train_losses = {key: total / len(train) for key, total in totals.items()}
        result.suppression_history.append((train_losses["sup_fg"], train_losses["sup_bg"]))

        val_score = score_view(view, val, self._settings.eval_batch_size)
        report = probe_layer(view, val, batch_size=self._settings.eval_batch_size)
        seconds = time.perf_counter() - started if self._settings.record_wall_time else 0.0

        for head in heads:
            row = _metrics_row(epoch, Split.TRAIN.value, head, correct[head] / len(train), train_losses,
                               None, None, seconds)
            if sink is not None:
                sink.write(row)
            result.rows.append(row)
        for head in heads:
            row = _metrics_row(epoch, Split.VAL.value, head, val_score.top1[head], val_score.losses,
                               report.zeta, report.zeta_group, seconds)
            if sink is not None:
                sink.write(row)
            result.rows.append(row)

        result.final_top1 = val_score.top1[Head.MAIN]
        if result.final_top1 > result.best_top1:
            result.best_top1 = result.final_top1
            result.best_epoch = epoch
            manifest = view.manifest()
            manifest.update({"epoch": str(epoch), "val_top1": repr(result.final_top1)})
            self._checkpoint_store.save(view.state(), manifest, result.checkpoint)
        logger.info(
            "epoch_completed",
            epoch=epoch,
            lr=optimizer.lr,
            train_top1=round(correct[Head.MAIN] / len(train), 4),
            val_top1=round(result.final_top1, 4),
            loss_total=round(sum(train_losses[key] for key in ("main", "fg", "bg")), 6),
            zeta_group=round(report.zeta_group, 6),
        )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class EvaluationService:
    """Scores a saved checkpoint on a corpus, one row per head.

    Args:
        corpus_store: Source of the evaluation corpus.
        checkpoint_store: Source of the checkpoint.
        settings: Harness defaults.
    """

    def __init__(self, corpus_store: ICorpusStore, checkpoint_store: ICheckpointStore,
                 settings: Settings | None = None) -> None:
        self._corpus_store = corpus_store
        self._checkpoint_store = checkpoint_store
        self._settings = settings or get_settings()

    def load_view(self, checkpoint: Path) -> tuple[GoCNNView, dict[str, str]]:
        tensors, manifest = self._checkpoint_store.load(checkpoint)
        return view_from_checkpoint(tensors, manifest), manifest

    def evaluate(self, checkpoint: Path, corpus: Path, split: Split = Split.VAL) -> list[MetricsRow]:
        """Single-crop top-1 of the main head and of every group head.

        Heads the checkpoint does not have are reported with ``top1 = None``
        (written as ``absent``), never as zero.

        Raises:
            DataError: If the corpus's class count differs from the checkpoint's.
        """
        view, manifest = self.load_view(checkpoint)
        records, num_classes = self._corpus_store.read(corpus)
        if num_classes != view.model.config.num_classes:
            raise DataError(
                f"corpus has {num_classes} classes but checkpoint {checkpoint} expects "
                f"{view.model.config.num_classes}"
            )
        score = score_view(view, records, self._settings.eval_batch_size)
        epoch = int(manifest.get("epoch", "0"))
        rows = [
            _metrics_row(epoch, split.value, head, score.top1.get(head), score.losses, None, None, 0.0)
            for head in (Head.MAIN, Head.FG, Head.BG)
        ]
        logger.info(
            "checkpoint_evaluated",
            checkpoint=str(checkpoint),
            samples=score.samples,
            **{f"top1_{head.value}": score.top1.get(head) for head in (Head.MAIN, Head.FG, Head.BG)},
        )
        return rows


# ---------------------------------------------------------------------------
# Experiment protocols
# ---------------------------------------------------------------------------


def _run_dir(base: Path, setting: str, seed: int) -> Path:
    return base / setting / f"seed{seed}"


class SweepService:
    """Privileged-fraction sweep: same images, re-drawn mask flags, GoCNN per (fraction, seed).

    Args:
        trainer: Training service used for every run.
    """

    def __init__(self, trainer: TrainingService) -> None:
        self._trainer = trainer

    def sweep_privileged(
        self,
        base: TrainConfig,
        fractions: Sequence[float],
        seeds: Sequence[int],
        include_baseline: bool = True,
    ) -> list[SummaryRow]:
        """Train GoCNN at every fraction and seed, plus a vanilla baseline row.

        The base corpus must be fully privileged; flags for fraction p and seed s
        are ``assign_privileged(corpus, p, s)``, the same flags ``generate`` draws
        for privileged fraction p with seed s.

        A run's top-1 is the main head scored on the validation set with the
        checkpoint the run keeps (its best validation epoch), which is the number
        ``eval`` reports for that checkpoint.

        Returns:
            One summary row per fraction (mean ± std of that top-1 over seeds),
            then the baseline row.

        Raises:
            ValidationError: If a fraction lies outside [0, 1] or no seed is given.
            DataError: If the base corpus is not fully privileged.
        """
        if not seeds:
            raise ValidationError("sweep needs at least one seed")
        for fraction in fractions:
            if not 0.0 <= fraction <= 1.0:
                raise ValidationError(f"privileged fraction must lie in [0, 1], got {fraction}")
        train, val = self._trainer.load_data(base)
        if not all(record.has_privileged for record in train):
            raise DataError("sweep needs a corpus generated with privileged fraction 1.0")

        rows: list[SummaryRow] = []
        pooled: list[float] = []
        for fraction in fractions:
            setting = f"gocnn_p{fraction:.2f}"
            values = []
            for seed in seeds:
                flagged = assign_privileged(train, fraction, seed)
                config = base.model_copy(update={
                    "seed": seed, "mode": TrainingMode.GOCNN, "output_dir": _run_dir(base.output_dir, setting, seed),
                })
                values.append(self._trainer.train(config, flagged, val).best_top1)
            row = SummaryRow.from_values(setting, list(seeds), values)
            row.extra["fraction"] = fraction
            rows.append(row)
            pooled.append(row.std_top1)
            logger.info("sweep_point_finished", fraction=fraction, mean_top1=row.mean_top1, std_top1=row.std_top1)
        if include_baseline:
            values = []
            for seed in seeds:
                config = base.model_copy(update={
                    "seed": seed, "mode": TrainingMode.VANILLA, "output_dir": _run_dir(base.output_dir, "vanilla", seed),
                })
                values.append(self._trainer.train(config, train, val).best_top1)
            rows.append(SummaryRow.from_values("vanilla", list(seeds), values))
        if pooled:
            pooled_std = float(np.sqrt(np.mean(np.square(pooled))))
            for row in rows:
                row.extra["pooled_std"] = pooled_std
        return rows


class AblationService:
    """Trains each training mode over seeds and reports per-head validation accuracy.

    Args:
        trainer: Training service used for every run.
        checkpoint_store: Source of each run's best checkpoint.
        evaluator_batch_size: Images per scoring pass.
    """

    def __init__(self, trainer: TrainingService, checkpoint_store: ICheckpointStore,
                 evaluator_batch_size: int = 128) -> None:
        self._trainer = trainer
        self._checkpoint_store = checkpoint_store
        self._batch_size = evaluator_batch_size

    def ablate(
        self,
        base: TrainConfig,
        modes: Sequence[TrainingMode],
        seeds: Sequence[int],
        include_object_baseline: bool = False,
    ) -> list[SummaryRow]:
        """Run every mode (and optionally vanilla on foreground-only images) for every seed.

        Returns:
            One row per setting: mean ± std of the main head, with mean fg/bg head
            accuracy in ``extra`` where those heads exist.
        """
        if not seeds:
            raise ValidationError("ablation needs at least one seed")
        train, val = self._trainer.load_data(base)
        settings: list[tuple[str, TrainingMode, bool]] = [(mode.value, mode, False) for mode in modes]
        if include_object_baseline:
            settings.append(("vanilla_obj", TrainingMode.VANILLA, True))
        rows = []
        for name, mode, object_only in settings:
            main_values: list[float] = []
            heads: dict[Head, list[float]] = {Head.FG: [], Head.BG: []}
            for seed in seeds:
                config = base.model_copy(update={
                    "seed": seed, "mode": mode, "foreground_only": object_only,
                    "output_dir": _run_dir(base.output_dir, name, seed),
                })
                result = self._trainer.train(config, train, val)
                best = self._best_view(result)
                score = score_view(best, val, self._batch_size)
                main_values.append(score.top1[Head.MAIN])
                for head, values in heads.items():
                    if head in score.top1:
                        values.append(score.top1[head])
            row = SummaryRow.from_values(name, list(seeds), main_values)
            for head, values in heads.items():
                if values:
                    row.extra[f"{head.value}_top1"] = float(np.mean(values))
            rows.append(row)
            logger.info("ablation_setting_finished", setting=name, mean_top1=row.mean_top1, std_top1=row.std_top1)
        return rows

    def _best_view(self, result: TrainResult) -> GoCNNView:
        tensors, manifest = self._checkpoint_store.load(result.checkpoint)
        return view_from_checkpoint(tensors, manifest)


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------


class DiversityService:
    """Probes ζ and ζ_g of a checkpoint's layers on a corpus.

    Args:
        evaluator: Loads checkpoints and corpora.
        exporter: Writes the diversity CSV.
        corpus_store: Source of probe samples.
        settings: Harness defaults.
    """

    def __init__(self, evaluator: EvaluationService, exporter: IDiversityExporter, corpus_store: ICorpusStore,
                 settings: Settings | None = None) -> None:
        self._evaluator = evaluator
        self._exporter = exporter
        self._corpus_store = corpus_store
        self._settings = settings or get_settings()

    def diversity(
        self,
        checkpoint: Path,
        corpus: Path,
        out: Path | None = None,
        layers: Sequence[int] | None = None,
    ) -> tuple[list[DiversityReport], GroupEnergy | None]:
        """Diversity of each requested layer (all layers by default), plus the group energy probe.

        The energy probe is skipped when the corpus carries no masks.
        """
        view, _ = self._evaluator.load_view(checkpoint)
        records, _ = self._corpus_store.read(corpus)
        chosen = list(layers) if layers else list(range(1, view.num_layers + 1))
        batch = self._settings.eval_batch_size
        reports = [probe_layer(view, records, layer_index=layer, batch_size=batch) for layer in chosen]
        energy = None
        if any(record.has_privileged for record in records):
            energy = group_activation_energy(view, records, view.model.config.feature_shape(), batch)
        if out is not None:
            self._exporter.write(reports, out)
        return reports, energy


def normalize_map(values: FloatArray) -> FloatArray:
    """Min-max normalize to [0, 1]; a flat map becomes all zeros."""
    low, high = float(values.min()), float(values.max())
    if high <= low:
        return np.zeros_like(values, dtype=np.float64)
    return (values - low) / (high - low)


def group_heatmaps(extractor: IFeatureExtractor, image: FloatArray, grouped: bool) -> dict[str, FloatArray]:
    """Channel-max of the final layer within each group, or over all channels when not grouped."""
    maps = extractor.layer_output(image[None], extractor.num_layers)[0]
    if not grouped:
        return {"all": maps.max(axis=0)}
    partition = extractor.partition
    return {
        name: maps[list(group)].max(axis=0)
        for name, group in zip(partition.names, partition.groups, strict=True)
    }


class VisualizationService:
    """Writes per-sample group activation heatmaps.

    Args:
        evaluator: Loads checkpoints.
        corpus_store: Source of samples.
        writer: Heatmap output.
    """

    def __init__(self, evaluator: EvaluationService, corpus_store: ICorpusStore, writer: IHeatmapWriter) -> None:
        self._evaluator = evaluator
        self._corpus_store = corpus_store
        self._writer = writer

    def visualize_groups(self, checkpoint: Path, corpus: Path, out_dir: Path, count: int = 8) -> list[Path]:
        """Write fg/bg channel-max heatmaps for the first ``count`` samples.

        Vanilla checkpoints have no groups, so each sample gets one whole-layer map.
        """
        if count < 1:
            raise ValidationError(f"count must be >= 1, got {count}")
        view, _ = self._evaluator.load_view(checkpoint)
        records, _ = self._corpus_store.read(corpus)
        return self.render(view, records[:count], out_dir, grouped=view.mode is not TrainingMode.VANILLA)

    def render(self, extractor: IFeatureExtractor, records: Sequence[SampleRecord], out_dir: Path,
               grouped: bool = True) -> list[Path]:
        written: list[Path] = []
        for index, record in enumerate(records):
            for name, raw in group_heatmaps(extractor, record.image, grouped).items():
                stem = out_dir / f"sample{index:03d}_label{record.label}_{name}"
                written.extend(self._writer.write(normalize_map(raw), raw, stem))
        logger.info("heatmaps_written", out_dir=str(out_dir), samples=len(records), files=len(written))
        return written
