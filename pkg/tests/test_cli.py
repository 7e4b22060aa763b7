"""End-to-end tests for the ``gocnn`` command line."""

import csv
import io
from collections.abc import Iterator
from pathlib import Path

import pytest
from pytest_mock import MockerFixture

from gocnn_lab.adapters.config_file import read_config_file
from gocnn_lab.adapters.corpus_store import CorpusStore
from gocnn_lab.cli.parser import UsageError, build_parser, parse_args
from gocnn_lab.core.optim import SGD
from gocnn_lab.errors import NotFoundError, NumericError, ValidationError
from gocnn_lab.main import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from gocnn_lab.settings import get_settings

TINY_MODEL = ["--stages", "4", "--final-channels", "8", "--batch-size", "4", "--log-level", "WARNING"]


@pytest.fixture(autouse=True)
def _stable_settings(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    """Turn wall-time recording off for every CLI run."""
    monkeypatch.setenv("GOCNN_RECORD_WALL_TIME", "false")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    path = tmp_path / "corpus.bin"
    code = main(["generate", "--classes", "3", "--per-class", "6", "--image-size", "8", "--seed", "2",
                 "--out", str(path), "--log-level", "WARNING"])
    assert code == EXIT_OK
    return path


@pytest.fixture
def checkpoint(tmp_path: Path, corpus: Path) -> Path:
    out_dir = tmp_path / "run"
    code = main(["train", "--corpus", str(corpus), "--out-dir", str(out_dir), "--epochs", "2", *TINY_MODEL])
    assert code == EXIT_OK
    return out_dir / "model.ckpt"


class TestGenerate:
    def test_header_carries_class_count(self, corpus: Path) -> None:
        header = CorpusStore().read_header(corpus)
        assert (header.num_classes, header.count, header.height) == (3, 18, 8)

    def test_validation_companion(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        code = main(["generate", "--classes", "2", "--per-class", "4", "--image-size", "8",
                     "--out", str(tmp_path / "t.bin"), "--val-out", str(tmp_path / "v.bin"), "--val-per-class", "3",
                     "--log-level", "WARNING"])
        assert code == EXIT_OK
        assert CorpusStore().read_header(tmp_path / "v.bin").count == 6
        assert "K=2" in capsys.readouterr().out

    def test_val_per_class_needs_val_out(self, tmp_path: Path) -> None:
        code = main(["generate", "--classes", "2", "--per-class", "4", "--image-size", "8",
                     "--out", str(tmp_path / "t.bin"), "--val-per-class", "3", "--log-level", "WARNING"])
        assert code == EXIT_USAGE

    def test_too_many_classes(self, tmp_path: Path) -> None:
        code = main(["generate", "--classes", "9", "--per-class", "1", "--out", str(tmp_path / "t.bin"),
                     "--log-level", "WARNING"])
        assert code == EXIT_USAGE


class TestTrainAndEval:
    def test_eval_prints_a_row_per_head(self, checkpoint: Path, corpus: Path, capsys: pytest.CaptureFixture[str]) -> None:
        capsys.readouterr()
        code = main(["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus), "--log-level", "WARNING"])
        assert code == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert [row["head"] for row in rows] == ["main", "fg", "bg"]
        assert all(0.0 <= float(row["top1"]) <= 1.0 for row in rows)

    def test_metrics_file_is_written(self, checkpoint: Path) -> None:
        lines = (checkpoint.parent / "metrics.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 13
        assert all(line.split(",")[-1] == "0.000" for line in lines[1:])

    def test_vanilla_eval_marks_absent_heads(
        self, tmp_path: Path, corpus: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        out_dir = tmp_path / "vanilla"
        assert main(["train", "--corpus", str(corpus), "--out-dir", str(out_dir), "--epochs", "1",
                     "--mode", "vanilla", *TINY_MODEL]) == EXIT_OK
        capsys.readouterr()
        eval_csv = tmp_path / "eval.csv"
        assert main(["eval", "--checkpoint", str(out_dir / "model.ckpt"), "--corpus", str(corpus),
                     "--out", str(eval_csv), "--log-level", "WARNING"]) == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert [row["top1"] for row in rows[1:]] == ["absent", "absent"]
        assert eval_csv.read_text(encoding="utf-8").count("absent") == 2

    def test_divergence_exits_with_numeric_code(
        self, tmp_path: Path, corpus: Path, mocker: MockerFixture
    ) -> None:
        mocker.patch.object(SGD, "step", side_effect=NumericError("sgd_step: non-finite update"))
        out_dir = tmp_path / "diverged"
        code = main(["train", "--corpus", str(corpus), "--out-dir", str(out_dir), "--lr", "1e6", *TINY_MODEL])
        assert code == EXIT_NUMERIC
        assert (out_dir / "metrics.csv").read_text(encoding="utf-8").startswith("epoch,")

    def test_missing_corpus(self, tmp_path: Path) -> None:
        code = main(["train", "--corpus", str(tmp_path / "none.bin"), *TINY_MODEL])
        assert code == EXIT_DATA

    def test_mismatched_class_count(self, tmp_path: Path, corpus: Path) -> None:
        code = main(["train", "--corpus", str(corpus), "--classes", "4", "--out-dir", str(tmp_path / "r"),
                     *TINY_MODEL])
        assert code == EXIT_USAGE

    def test_indivisible_split(self, tmp_path: Path, corpus: Path) -> None:
        code = main(["train", "--corpus", str(corpus), "--out-dir", str(tmp_path / "r"), "--stages", "4",
                     "--final-channels", "6", "--log-level", "WARNING"])
        assert code == EXIT_USAGE


class TestAnalysisCommands:
    def test_diversity(self, checkpoint: Path, corpus: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        capsys.readouterr()
        out = tmp_path / "diversity.csv"
        code = main(["diversity", "--checkpoint", str(checkpoint), "--corpus", str(corpus), "--layers", "2",
                     "--out", str(out), "--log-level", "WARNING"])
        assert code == EXIT_OK
        printed = capsys.readouterr().out.splitlines()
        assert printed[0] == "layer,zeta,zeta_group,zeta_offdiag"
        assert printed[1].startswith("2,")
        assert printed[2].startswith("fg_energy")
        assert out.is_file()

    def test_visualize(self, checkpoint: Path, corpus: Path, tmp_path: Path) -> None:
        out_dir = tmp_path / "maps"
        code = main(["visualize", "--checkpoint", str(checkpoint), "--corpus", str(corpus),
                     "--out-dir", str(out_dir), "--count", "2", "--log-level", "WARNING"])
        assert code == EXIT_OK
        assert len(list(out_dir.glob("*.pgm"))) == 4

    def test_sweep_without_baseline(
        self, corpus: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        capsys.readouterr()
        summary = tmp_path / "sweep.csv"
        code = main(["sweep", "--corpus", str(corpus), "--out-dir", str(tmp_path / "sweep"), "--epochs", "1",
                     "--fractions", "0,1", "--seeds", "0", "--no-baseline", "--out", str(summary), *TINY_MODEL])
        assert code == EXIT_OK
        printed = capsys.readouterr().out.splitlines()
        assert printed[0] == "setting,mean_top1,std_top1"
        assert [line.split(",")[0] for line in printed[1:]] == ["gocnn_p0.00", "gocnn_p1.00"]
        assert summary.is_file()

    def test_ablate_rejects_unknown_mode(self, corpus: Path, tmp_path: Path) -> None:
        code = main(["ablate", "--corpus", str(corpus), "--out-dir", str(tmp_path / "ab"),
                     "--modes", "gocnn,bogus", *TINY_MODEL])
        assert code == EXIT_USAGE


class TestUsage:
    def test_unknown_flag(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["train", "--bogus"]) == EXIT_USAGE
        assert "usage:" in capsys.readouterr().err

    def test_missing_command(self) -> None:
        assert main([]) == EXIT_USAGE

    def test_bad_ratio(self, corpus: Path) -> None:
        assert main(["train", "--corpus", str(corpus), "--ratio", "3-1"]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path: Path, corpus: Path) -> None:
        code = main(["train", "--corpus", str(corpus), "--config", str(tmp_path / "absent.cfg")])
        assert code == EXIT_DATA


class TestConfigFile:
    def test_file_entries_override_flags(self, tmp_path: Path, corpus: Path) -> None:
        config = tmp_path / "run.cfg"
        config.write_text("# tiny run\nepochs = 1\nforeground-only = yes\n", encoding="utf-8")
        args = parse_args(build_parser(), ["train", "--corpus", str(corpus), "--epochs", "5", "--config", str(config)])
        assert args.epochs == 1
        assert args.foreground_only is True

    def test_file_can_supply_required_flags(self, tmp_path: Path, corpus: Path) -> None:
        config = tmp_path / "run.cfg"
        config.write_text(f"corpus = {corpus}\nlr = 0.01\n", encoding="utf-8")
        args = parse_args(build_parser(), ["train", "--config", str(config)])
        assert args.corpus == corpus
        assert args.lr == 0.01

    def test_false_values_become_negated_flags(self, tmp_path: Path) -> None:
        config = tmp_path / "gen.cfg"
        config.write_text("classes = 2\nper_class = 1\nout = x.bin\nlog_json = off\n", encoding="utf-8")
        args = parse_args(build_parser(), ["generate", "--config", str(config)])
        assert args.per_class == 1
        assert args.log_json is False

    def test_unknown_key_is_a_usage_error(self, tmp_path: Path, corpus: Path) -> None:
        config = tmp_path / "run.cfg"
        config.write_text("learning_speed = 3\n", encoding="utf-8")
        with pytest.raises(UsageError, match="run.cfg"):
            parse_args(build_parser(), ["train", "--corpus", str(corpus), "--config", str(config)])

    def test_repeated_key(self, tmp_path: Path) -> None:
        config = tmp_path / "run.cfg"
        config.write_text("epochs = 1\nepochs = 2\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="repeated"):
            read_config_file(config)

    def test_line_without_separator(self, tmp_path: Path) -> None:
        config = tmp_path / "run.cfg"
        config.write_text("epochs 1\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            read_config_file(config)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(NotFoundError):
            read_config_file(tmp_path / "none.cfg")
