"""Structured logging for gocnn-lab.

Thin structlog setup: modules call get_logger(__name__) and log an event name
plus keyword context, e.g. logger.info("epoch_completed", epoch=3, top1=0.81).
Log lines go to stderr so CLI stdout stays machine-readable.
"""

import logging
import sys

import structlog

_configured = False


def configure_logging(level: str = "INFO", json: bool = False) -> None:
    """Install the structlog processor chain.

    Args:
        level: Minimum level name (DEBUG, INFO, WARNING, ERROR).
        json: Render JSON lines instead of the console format.
    """
    global _configured
    numeric_level = logging.getLevelName(level.upper())
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO

    renderer: structlog.typing.Processor = (
        structlog.processors.JSONRenderer() if json else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    _configured = True


def get_logger(name: str) -> structlog.typing.FilteringBoundLogger:
    """Return a bound logger for a module.

    Args:
        name: Module name, normally __name__.

    Returns:
        A structlog logger carrying the module name as context.
    """
    if not _configured:
        configure_logging()
    logger: structlog.typing.FilteringBoundLogger = structlog.get_logger(name).bind(module=name)
    return logger
