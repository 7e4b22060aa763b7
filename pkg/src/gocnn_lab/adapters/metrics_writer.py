"""CSV output for metrics rows, diversity reports and summary tables."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from pathlib import Path
from types import TracebackType
from typing import TextIO

from gocnn_lab.core.models import METRICS_COLUMNS, DiversityReport, MetricsRow, SummaryRow
from gocnn_lab.errors import ValidationError

DIVERSITY_COLUMNS: tuple[str, ...] = (
    "layer", "zeta", "zeta_group", "mean_abs_cross_corr", "mean_abs_within_corr", "zeta_offdiag",
)

SUMMARY_COLUMNS: tuple[str, ...] = ("setting", "mean_top1", "std_top1", "seeds", "per_seed")


class CsvMetricsSink:
    """Writes metrics rows to a CSV file, flushing after every row.

    A crash mid-training leaves every completed row on disk.

    Args:
        path: Output file; parent directories are created.
    """

    def __init__(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        self._path = path
        self._handle: TextIO = path.open("w", encoding="utf-8", newline="")
        self._writer = csv.DictWriter(self._handle, fieldnames=list(METRICS_COLUMNS), lineterminator="\n")
        self._writer.writeheader()
        self._handle.flush()
        self._last: tuple[int, str] | None = None

    @property
    def path(self) -> Path:
        return self._path

    def write(self, row: MetricsRow) -> None:
        if self._last is not None and row.epoch < self._last[0]:
            raise ValidationError(f"metrics rows must be monotone in epoch; got {row.epoch} after {self._last[0]}")
        self._writer.writerow(row.as_csv_row())
        self._handle.flush()
        self._last = (row.epoch, row.split)

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self) -> CsvMetricsSink:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()


class CsvDiversityExporter:
    """Writes one diversity row per probed layer."""

    def write(self, reports: Sequence[DiversityReport], path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(DIVERSITY_COLUMNS), lineterminator="\n")
            writer.writeheader()
            for report in reports:
                writer.writerow(report.as_csv_row())


def write_summary(rows: Sequence[SummaryRow], path: Path) -> None:
    """Write an experiment summary table, one row per setting."""
    path.parent.mkdir(parents=True, exist_ok=True)
    extra_keys = sorted({key for row in rows for key in row.extra})
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=[*SUMMARY_COLUMNS, *extra_keys], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            record = {
                "setting": row.setting,
                "mean_top1": repr(row.mean_top1),
                "std_top1": repr(row.std_top1),
                "seeds": " ".join(str(seed) for seed in row.seeds),
                "per_seed": " ".join(repr(value) for value in row.per_seed),
            }
            record.update({key: repr(row.extra[key]) if key in row.extra else "" for key in extra_keys})
            writer.writerow(record)
