"""gocnn-lab command-line entry point."""

import sys
from collections.abc import Sequence

from gocnn_lab.cli.commands import HANDLERS
from gocnn_lab.cli.parser import UsageError, build_parser, parse_args
from gocnn_lab.errors import DataError, GoCNNError, NotFoundError, NumericError
from gocnn_lab.observability import configure_logging, get_logger
from gocnn_lab.settings import get_settings

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def main(argv: Sequence[str] | None = None) -> int:
    """Run one ``gocnn`` command and return its exit code.

    Args:
        argv: Arguments without the program name; ``sys.argv[1:]`` when omitted.

    Returns:
        0 on success, 1 on usage or validation errors, 2 on data errors,
        3 when training produced non-finite values.
    """
    parser = build_parser()
    arguments = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(parser, arguments)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"gocnn: error: {exc}\n")
        return EXIT_USAGE
    except GoCNNError as exc:
        sys.stderr.write(f"gocnn: error: {exc}\n")
        return EXIT_DATA if isinstance(exc, (DataError, NotFoundError)) else EXIT_USAGE

    settings = get_settings()
    configure_logging(
        level=args.log_level or settings.log_level,
        json=settings.log_json if args.log_json is None else args.log_json,
    )
    try:
        return HANDLERS[args.command](args, settings)
    except NumericError as exc:
        logger.error("numeric_failure", command=args.command, error=str(exc))
        return EXIT_NUMERIC
    except (DataError, NotFoundError) as exc:
        logger.error("data_error", command=args.command, error=str(exc))
        return EXIT_DATA
    except GoCNNError as exc:
        logger.error("invalid_request", command=args.command, error=str(exc))
        return EXIT_USAGE


def run() -> None:
    """Console-script wrapper around ``main``."""
    sys.exit(main())
