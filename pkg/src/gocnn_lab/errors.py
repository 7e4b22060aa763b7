"""Domain errors for gocnn-lab.

Every error raised on purpose by this package derives from GoCNNError so the
CLI can map it to an exit code:
  - ValidationError (and ShapeError): usage / configuration problems → 1
  - DataError, NotFoundError: unreadable or inconsistent data → 2
  - NumericError: non-finite values during training → 3
"""

from collections.abc import Sequence


class GoCNNError(Exception):
    """Base class for all gocnn-lab errors."""


class ValidationError(GoCNNError, ValueError):
    """Raised when an argument or configuration violates a precondition."""


class ShapeError(ValidationError):
    """Raised when tensor dimensions disagree.

    Args:
        operation: Name of the operation that rejected its inputs.
        message: Human-readable description of the mismatch.
        shapes: The offending shapes, reported verbatim.
    """

    def __init__(self, operation: str, message: str, shapes: Sequence[tuple[int, ...]] = ()) -> None:
        self.operation = operation
        self.shapes = [tuple(shape) for shape in shapes]
        report = ", ".join(str(shape) for shape in self.shapes)
        super().__init__(f"{operation}: {message}" + (f" (shapes: {report})" if report else ""))


class NotFoundError(GoCNNError):
    """Raised when a referenced file, layer or head does not exist."""


class DataError(GoCNNError):
    """Raised when data on disk or in memory is inconsistent with the request."""


class CorpusFormatError(DataError):
    """Base class for corpus file decoding failures.

    Attributes:
        code: Stable machine-readable failure code.
    """

    code = "corpus_format"


class CorpusHeaderError(CorpusFormatError):
    """The corpus header is malformed (bad magic, version or dimensions)."""

    code = "malformed_header"


class CorpusTruncatedError(CorpusFormatError):
    """The corpus file ends before the payload the header announces."""

    code = "truncated_payload"


class CorpusChecksumError(CorpusFormatError):
    """A record's CRC32 does not match its payload."""

    code = "checksum_mismatch"


class CheckpointFormatError(DataError):
    """The checkpoint or its manifest cannot be decoded."""


class NumericError(GoCNNError):
    """Raised when an operation produces NaN or infinite values."""
