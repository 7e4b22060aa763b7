"""Subcommand handlers.

Handlers translate parsed flags into core.models objects, wire adapters into
services, and print results to stdout. They hold no experiment logic.
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from gocnn_lab.adapters.checkpoint_store import CheckpointStore
from gocnn_lab.adapters.corpus_store import CorpusStore
from gocnn_lab.adapters.heatmap_writer import PgmHeatmapWriter
from gocnn_lab.adapters.metrics_writer import CsvDiversityExporter, CsvMetricsSink, write_summary
from gocnn_lab.adapters.shape_synthesizer import ShapeSynthesizer
from gocnn_lab.core.models import (
    METRICS_COLUMNS,
    ClassificationMode,
    CorpusSpec,
    GoCNNConfig,
    LossWeights,
    MetricsRow,
    Split,
    StageSpec,
    SummaryRow,
    TrainConfig,
    TrainingMode,
    validated,
)
from gocnn_lab.core.services import (
    AblationService,
    CorpusService,
    DiversityService,
    EvaluationService,
    SweepService,
    TrainingService,
    VisualizationService,
)
from gocnn_lab.errors import ValidationError
from gocnn_lab.settings import Settings

Handler = Callable[[argparse.Namespace, Settings], int]


def _write_rows(rows: Sequence[MetricsRow], handle: object) -> None:
    writer = csv.DictWriter(handle, fieldnames=list(METRICS_COLUMNS), lineterminator="\n")  # type: ignore[arg-type]
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_csv_row())


def _print_summary(rows: Sequence[SummaryRow]) -> None:
    sys.stdout.write("setting,mean_top1,std_top1\n")
    for row in rows:
        sys.stdout.write(f"{row.setting},{row.mean_top1:.4f},{row.std_top1:.4f}\n")


def build_train_config(args: argparse.Namespace, settings: Settings, store: CorpusStore) -> TrainConfig:
    """Assemble a TrainConfig from training flags, falling back to settings and the corpus header."""
    header = store.read_header(args.corpus)
    model = validated(
        GoCNNConfig,
        num_classes=args.classes if args.classes is not None else header.num_classes,
        image_size=args.image_size if args.image_size is not None else header.height,
        stages=[StageSpec(out_channels=channels) for channels in args.stages],
        final_channels=args.final_channels,
        group_ratio=args.ratio,
        loss_weights=LossWeights(main=args.w_main, fg=args.w_fg, bg=args.w_bg, sup=args.w_sup),
        classification=ClassificationMode.MULTILABEL if args.multilabel else ClassificationMode.SOFTMAX,
    )
    return validated(
        TrainConfig,
        corpus=args.corpus,
        val_corpus=args.val_corpus,
        model=model,
        output_dir=args.out_dir,
        epochs=args.epochs if args.epochs is not None else settings.epochs,
        batch_size=args.batch_size if args.batch_size is not None else settings.batch_size,
        learning_rate=args.lr if args.lr is not None else settings.learning_rate,
        momentum=args.momentum if args.momentum is not None else settings.momentum,
        weight_decay=args.weight_decay if args.weight_decay is not None else settings.weight_decay,
        patience=args.patience if args.patience is not None else settings.plateau_patience,
        min_delta=args.min_delta if args.min_delta is not None else settings.plateau_min_delta,
        seed=args.seed,
        mode=TrainingMode(getattr(args, "mode", TrainingMode.GOCNN.value)),
        foreground_only=args.foreground_only,
        val_fraction=args.val_fraction if args.val_fraction is not None else settings.val_fraction,
    )


def _trainer(settings: Settings) -> tuple[TrainingService, CorpusStore, CheckpointStore]:
    corpus_store = CorpusStore()
    checkpoint_store = CheckpointStore()
    return TrainingService(corpus_store, checkpoint_store, CsvMetricsSink, settings), corpus_store, checkpoint_store


def cmd_generate(args: argparse.Namespace, settings: Settings) -> int:
    spec = validated(
        CorpusSpec,
        num_classes=args.classes,
        samples_per_class=args.per_class,
        image_size=args.image_size,
        privileged_fraction=args.privileged,
        background=args.background,
        texture_mixing=args.mixing,
        seed=args.seed,
    )
    workers = args.workers if args.workers is not None else settings.generation_workers
    service = CorpusService(CorpusStore(), ShapeSynthesizer(workers=workers))
    records = service.generate(spec, args.out)
    sys.stdout.write(f"{args.out}: {len(records)} records, K={spec.num_classes}\n")
    if args.val_out is not None:
        per_class = args.val_per_class if args.val_per_class is not None else max(1, args.per_class // 2)
        val_records = service.generate_validation(spec, per_class, args.val_out)
        sys.stdout.write(f"{args.val_out}: {len(val_records)} records, K={spec.num_classes}\n")
    elif args.val_per_class is not None:
        raise ValidationError("--val-per-class needs --val-out")
    return 0


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    trainer, corpus_store, _ = _trainer(settings)
    config = build_train_config(args, settings, corpus_store)
    result = trainer.train(config)
    sys.stdout.write(
        f"checkpoint={result.checkpoint} best_epoch={result.best_epoch} best_top1={result.best_top1:.4f}\n"
    )
    return 0


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    service = EvaluationService(CorpusStore(), CheckpointStore(), settings)
    rows = service.evaluate(args.checkpoint, args.corpus, Split(args.split))
    _write_rows(rows, sys.stdout)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with args.out.open("w", encoding="utf-8", newline="") as handle:
            _write_rows(rows, handle)
    return 0


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    trainer, corpus_store, _ = _trainer(settings)
    config = build_train_config(args, settings, corpus_store)
    seeds = args.seeds or [args.seed]
    rows = SweepService(trainer).sweep_privileged(config, args.fractions, seeds, include_baseline=args.baseline)
    _print_summary(rows)
    if args.out is not None:
        write_summary(rows, args.out)
    return 0


def cmd_ablate(args: argparse.Namespace, settings: Settings) -> int:
    trainer, corpus_store, checkpoint_store = _trainer(settings)
    config = build_train_config(args, settings, corpus_store)
    try:
        modes = [TrainingMode(name.strip()) for name in args.modes.split(",") if name.strip()]
    except ValueError as exc:
        raise ValidationError(f"unknown mode in --modes {args.modes!r}") from exc
    seeds = args.seeds or [args.seed]
    service = AblationService(trainer, checkpoint_store, settings.eval_batch_size)
    rows = service.ablate(config, modes, seeds, include_object_baseline=args.object_baseline)
    _print_summary(rows)
    if args.out is not None:
        write_summary(rows, args.out)
    return 0


def cmd_diversity(args: argparse.Namespace, settings: Settings) -> int:
    corpus_store = CorpusStore()
    evaluator = EvaluationService(corpus_store, CheckpointStore(), settings)
    service = DiversityService(evaluator, CsvDiversityExporter(), corpus_store, settings)
    reports, energy = service.diversity(args.checkpoint, args.corpus, args.out, args.layers)
    sys.stdout.write("layer,zeta,zeta_group,zeta_offdiag\n")
    for report in reports:
        sys.stdout.write(f"{report.layer_index},{report.zeta:.6f},{report.zeta_group:.6f},{report.zeta_offdiag:.6f}\n")
    if energy is not None:
        sys.stdout.write(
            f"fg_energy foreground={energy.fg_on_foreground:.6g} background={energy.fg_on_background:.6g}\n"
            f"bg_energy foreground={energy.bg_on_foreground:.6g} background={energy.bg_on_background:.6g}\n"
        )
    return 0


def cmd_visualize(args: argparse.Namespace, settings: Settings) -> int:
    corpus_store = CorpusStore()
    evaluator = EvaluationService(corpus_store, CheckpointStore(), settings)
    service = VisualizationService(evaluator, corpus_store, PgmHeatmapWriter())
    written: list[Path] = service.visualize_groups(args.checkpoint, args.corpus, args.out_dir, args.count)
    sys.stdout.write(f"{len(written)} files written to {args.out_dir}\n")
    return 0


HANDLERS: dict[str, Handler] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "diversity": cmd_diversity,
    "visualize": cmd_visualize,
}
