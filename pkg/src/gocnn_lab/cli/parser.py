"""Argument parsing for the ``gocnn`` command.

Every subcommand shares ``--seed``, ``--config`` and the logging flags. A
``--config`` file holds ``key = value`` lines named after long flags; its
entries are appended after the command line, so they win over flags given
there.
"""

from __future__ import annotations

import argparse
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from gocnn_lab import __version__
from gocnn_lab.adapters.config_file import read_config_file
from gocnn_lab.core.models import BackgroundMode, Split, TrainingMode
from gocnn_lab.errors import ValidationError

_TRUE = {"true", "yes", "on"}
_FALSE = {"false", "no", "off"}


class UsageError(ValidationError):
    """Raised for unknown flags, bad flag values and malformed config files."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with status 2."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def float_list(text: str) -> list[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def int_list(text: str) -> list[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def group_ratio(text: str) -> tuple[int, int]:
    fg_part, sep, bg_part = text.partition(":")
    try:
        if not sep:
            raise ValueError(text)
        return int(fg_part), int(bg_part)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a ratio like 3:1, got {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    common.add_argument("--config", type=Path, default=None, help="key = value file overriding flags")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-json", action=argparse.BooleanOptionalAction, default=None)
    return common


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--classes", type=int, default=None, help="K; read from the corpus header when omitted")
    group.add_argument("--image-size", type=int, default=None, help="read from the corpus header when omitted")
    group.add_argument("--stages", type=int_list, default=[16, 32], help="channels of the pooled stages")
    group.add_argument("--final-channels", type=int, default=64)
    group.add_argument("--ratio", type=group_ratio, default=(3, 1), help="fg:bg channel ratio")
    group.add_argument("--multilabel", action=argparse.BooleanOptionalAction, default=False)
    group.add_argument("--w-main", type=float, default=1.0)
    group.add_argument("--w-fg", type=float, default=1.0)
    group.add_argument("--w-bg", type=float, default=1.0)
    group.add_argument("--w-sup", type=float, default=1.0)


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    _add_model_flags(parser)
    group = parser.add_argument_group("training")
    group.add_argument("--corpus", type=Path, required=True)
    group.add_argument("--val-corpus", type=Path, default=None)
    group.add_argument("--out-dir", type=Path, default=Path("runs"))
    group.add_argument("--epochs", type=int, default=None)
    group.add_argument("--batch-size", type=int, default=None)
    group.add_argument("--lr", type=float, default=None)
    group.add_argument("--momentum", type=float, default=None)
    group.add_argument("--weight-decay", type=float, default=None)
    group.add_argument("--patience", type=int, default=None)
    group.add_argument("--min-delta", type=float, default=None)
    group.add_argument("--val-fraction", type=float, default=None)
    group.add_argument("--foreground-only", action=argparse.BooleanOptionalAction, default=False)


def build_parser() -> CliParser:
    """Build the ``gocnn`` parser with one subparser per command."""
    common = _common()
    parser = CliParser(prog="gocnn", description="Group-orthogonal CNN laboratory on synthetic shapes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    generate = commands.add_parser("generate", parents=[common], help="render a synthetic corpus")
    generate.add_argument("--classes", type=int, required=True)
    generate.add_argument("--per-class", type=int, required=True)
    generate.add_argument("--image-size", type=int, default=32)
    generate.add_argument("--privileged", type=float, default=1.0, help="fraction of samples with masks")
    generate.add_argument("--background", choices=[m.value for m in BackgroundMode],
                          default=BackgroundMode.INFORMATIVE.value)
    generate.add_argument("--mixing", type=float, default=0.3, help="texture mixing probability")
    generate.add_argument("--out", type=Path, required=True)
    generate.add_argument("--val-out", type=Path, default=None)
    generate.add_argument("--val-per-class", type=int, default=None)
    generate.add_argument("--workers", type=int, default=None)

    train = commands.add_parser("train", parents=[common], help="train one model")
    _add_training_flags(train)
    train.add_argument("--mode", choices=[m.value for m in TrainingMode], default=TrainingMode.GOCNN.value)

    evaluate = commands.add_parser("eval", parents=[common], help="score a checkpoint per head")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--corpus", type=Path, required=True)
    evaluate.add_argument("--split", choices=[s.value for s in Split], default=Split.VAL.value)
    evaluate.add_argument("--out", type=Path, default=None, help="also write the rows as CSV")

    sweep = commands.add_parser("sweep", parents=[common], help="privileged-fraction sweep")
    _add_training_flags(sweep)
    sweep.add_argument("--fractions", type=float_list, default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    sweep.add_argument("--seeds", type=int_list, default=None, help="defaults to --seed alone")
    sweep.add_argument("--baseline", action=argparse.BooleanOptionalAction, default=True)
    sweep.add_argument("--out", type=Path, default=None)

    ablate = commands.add_parser("ablate", parents=[common], help="train each mode over seeds")
    _add_training_flags(ablate)
    ablate.add_argument("--modes", default="gocnn,only_fg,only_bg,vanilla")
    ablate.add_argument("--seeds", type=int_list, default=None, help="defaults to --seed alone")
    ablate.add_argument("--object-baseline", action=argparse.BooleanOptionalAction, default=False)
    ablate.add_argument("--out", type=Path, default=None)

    diversity = commands.add_parser("diversity", parents=[common], help="ζ and ζ_g per layer")
    diversity.add_argument("--checkpoint", type=Path, required=True)
    diversity.add_argument("--corpus", type=Path, required=True)
    diversity.add_argument("--layers", type=int_list, default=None)
    diversity.add_argument("--out", type=Path, default=None)

    visualize = commands.add_parser("visualize", parents=[common], help="group activation heatmaps")
    visualize.add_argument("--checkpoint", type=Path, required=True)
    visualize.add_argument("--corpus", type=Path, required=True)
    visualize.add_argument("--out-dir", type=Path, required=True)
    visualize.add_argument("--count", type=int, default=8)
    return parser


def _config_tokens(entries: dict[str, str]) -> list[str]:
    tokens: list[str] = []
    for key, value in entries.items():
        flag = "--" + key.replace("_", "-")
        if key == "config":
            raise UsageError("a config file cannot name another config file")
        lowered = value.lower()
        if lowered in _TRUE:
            tokens.append(flag)
        elif lowered in _FALSE:
            tokens.append("--no-" + key.replace("_", "-"))
        else:
            tokens.extend([flag, value])
    return tokens


def parse_args(parser: CliParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv`` with the config file's entries appended after it.

    Raises:
        UsageError: On unknown flags or values, including those coming from the config file.
    """
    scout = CliParser(add_help=False)
    scout.add_argument("--config", type=Path, default=None)
    known, _ = scout.parse_known_args(list(argv))
    if known.config is None:
        return parser.parse_args(list(argv))
    tokens = _config_tokens(read_config_file(known.config))
    try:
        return parser.parse_args([*argv, *tokens])
    except UsageError as exc:
        raise UsageError(f"{exc} (command line plus {known.config})") from exc
