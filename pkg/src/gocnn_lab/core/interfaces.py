"""Abstract interfaces (Protocol classes) for gocnn-lab.

Services depend on these, not on concrete adapters, so tests can swap in
in-memory fakes.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Protocol, runtime_checkable

from gocnn_lab.core.models import CorpusSpec, DiversityReport, GroupPartition, MetricsRow, SampleRecord
from gocnn_lab.core.tensor import FloatArray


@runtime_checkable
class IFeatureExtractor(Protocol):
    """Anything that can report per-layer feature maps for a batch of images."""

    @property
    def partition(self) -> GroupPartition: ...

    @property
    def num_layers(self) -> int: ...

    def layer_output(self, images: FloatArray, layer_index: int) -> FloatArray: ...


@runtime_checkable
class ICorpusStore(Protocol):
    """Persistence for synthetic corpora."""

    def write(self, records: Sequence[SampleRecord], path: Path, num_classes: int) -> int: ...

    def read(self, path: Path) -> tuple[list[SampleRecord], int]: ...


@runtime_checkable
class ICheckpointStore(Protocol):
    """Persistence for named parameter tensors and their manifest."""

    def save(self, tensors: Mapping[str, FloatArray], manifest: Mapping[str, str], path: Path) -> None: ...

    def load(self, path: Path) -> tuple[dict[str, FloatArray], dict[str, str]]: ...


@runtime_checkable
class IMetricsSink(Protocol):
    """Row-at-a-time metrics output; every write is flushed."""

    def write(self, row: MetricsRow) -> None: ...

    def close(self) -> None: ...


@runtime_checkable
class IHeatmapWriter(Protocol):
    """Writes one 2-D map as PGM plus raw CSV."""

    def write(self, heatmap: FloatArray, raw: FloatArray, stem: Path) -> list[Path]: ...


@runtime_checkable
class IDiversityExporter(Protocol):
    """Writes diversity reports as CSV."""

    def write(self, reports: Sequence[DiversityReport], path: Path) -> None: ...


@runtime_checkable
class ICorpusSynthesizer(Protocol):
    """Renders the records a CorpusSpec describes."""

    def generate(self, spec: CorpusSpec) -> list[SampleRecord]: ...
