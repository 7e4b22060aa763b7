"""Shared test fixtures for gocnn-lab."""

from pathlib import Path

import numpy as np
import pytest

from gocnn_lab.adapters.checkpoint_store import CheckpointStore
from gocnn_lab.adapters.corpus_store import CorpusStore
from gocnn_lab.adapters.shape_synthesizer import ShapeSynthesizer
from gocnn_lab.core.models import CorpusSpec, GoCNNConfig, SampleRecord, StageSpec, TrainConfig
from gocnn_lab.observability import configure_logging
from gocnn_lab.settings import Settings
from tests.factories import centre_square, make_record


@pytest.fixture(autouse=True)
def _quiet_logging() -> None:
    configure_logging(level="WARNING")


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for randomized cases."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> GoCNNConfig:
    """Reduced TinyNet: conv(4)-pool on 8×8 input, final conv with 8 channels split 6:2 at 4×4."""
    return GoCNNConfig(
        num_classes=3,
        image_size=8,
        stages=[StageSpec(out_channels=4)],
        final_channels=8,
    )


@pytest.fixture
def settings() -> Settings:
    """Harness settings with wall time off, so CSV output is byte-stable."""
    return Settings(record_wall_time=False, eval_batch_size=16, plateau_factor=0.1)


@pytest.fixture
def mixed_records() -> list[SampleRecord]:
    """Four samples: two with masks, two sentinels."""
    return [
        make_record(0, mask=centre_square(), seed=1),
        make_record(1, seed=2),
        make_record(2, mask=centre_square(low=0, high=4), seed=3),
        make_record(0, seed=4),
    ]


@pytest.fixture
def small_spec() -> CorpusSpec:
    return CorpusSpec(num_classes=3, samples_per_class=6, image_size=8, privileged_fraction=1.0, seed=3)


@pytest.fixture
def corpus_file(tmp_path: Path, small_spec: CorpusSpec) -> Path:
    """Fully privileged 3-class 8×8 corpus written to disk."""
    path = tmp_path / "corpus.bin"
    records = ShapeSynthesizer().generate(small_spec)
    CorpusStore().write(records, path, small_spec.num_classes)
    return path


@pytest.fixture
def train_config(tmp_path: Path, corpus_file: Path, tiny_config: GoCNNConfig) -> TrainConfig:
    """Two short epochs on the tiny corpus."""
    return TrainConfig(
        corpus=corpus_file,
        model=tiny_config,
        output_dir=tmp_path / "run",
        epochs=2,
        batch_size=4,
        learning_rate=0.05,
        seed=0,
    )


@pytest.fixture
def stores() -> tuple[CorpusStore, CheckpointStore]:
    return CorpusStore(), CheckpointStore()
