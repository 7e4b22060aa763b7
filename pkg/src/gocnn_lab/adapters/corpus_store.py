"""GOSYN1 corpus files.

Layout, little-endian:

    header:  b"GOSYN1" | u32 version | u32 K | u32 count | u32 H | u32 W
    record:  u32 label | u8 has_privileged | H·W·3 u8 image (row-major, RGB last)
             | H·W u8 mask | u32 CRC32(label … mask)

Image bytes hold round(255·x); generated images are already multiples of
1/255, so write-then-read is bit-exact.
"""

from __future__ import annotations

import struct
import zlib
from collections.abc import Sequence
from pathlib import Path
from typing import NamedTuple

import numpy as np

from gocnn_lab.core.models import Mask, MaskPolarity, MaskResolution, SampleRecord
from gocnn_lab.errors import (
    CorpusChecksumError,
    CorpusFormatError,
    CorpusHeaderError,
    CorpusTruncatedError,
    NotFoundError,
    ValidationError,
)
from gocnn_lab.observability import get_logger

logger = get_logger(__name__)

MAGIC = b"GOSYN1"
VERSION = 1
_HEADER = struct.Struct("<6sIIIII")
_RECORD_PREFIX = struct.Struct("<IB")
_CRC = struct.Struct("<I")


class CorpusHeader(NamedTuple):
    num_classes: int
    count: int
    height: int
    width: int


def _decode_header(blob: bytes, path: Path) -> CorpusHeader:
    if len(blob) < _HEADER.size:
        raise CorpusHeaderError(f"{path}: file is shorter than the GOSYN1 header")
    magic, version, num_classes, count, height, width = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorpusHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorpusHeaderError(f"{path}: unsupported version {version}")
    if num_classes < 1 or height < 1 or width < 1:
        raise CorpusHeaderError(f"{path}: invalid dimensions K={num_classes} H={height} W={width}")
    return CorpusHeader(num_classes, count, height, width)


def header_size() -> int:
    return _HEADER.size


def record_size(height: int, width: int) -> int:
    """Bytes occupied by one record of an H×W corpus, checksum included."""
    return _RECORD_PREFIX.size + 4 * height * width + _CRC.size


class CorpusStore:
    """Reads and writes GOSYN1 corpus files."""

    def read_header(self, path: Path) -> CorpusHeader:
        """Decode only the header; the payload is not validated."""
        if not path.is_file():
            raise NotFoundError(f"corpus file {path} does not exist")
        with path.open("rb") as handle:
            blob = handle.read(_HEADER.size)
        return _decode_header(blob, path)

    def write(self, records: Sequence[SampleRecord], path: Path, num_classes: int) -> int:
        """Write ``records`` and return the number of bytes written.

        Raises:
            ValidationError: If records disagree in size or carry labels outside [0, K).
        """
        if not records:
            raise ValidationError("cannot write an empty corpus")
        height, width = records[0].height, records[0].width
        chunks = [_HEADER.pack(MAGIC, VERSION, num_classes, len(records), height, width)]
        for record in records:
            if (record.height, record.width) != (height, width):
                raise ValidationError(
                    f"corpus records must share one size; got {record.height}x{record.width} after {height}x{width}"
                )
            if not 0 <= record.label < num_classes:
                raise ValidationError(f"label {record.label} outside [0, {num_classes})")
            image = np.round(record.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
            mask = record.mask_fg.data.astype(np.uint8)
            payload = _RECORD_PREFIX.pack(record.label, int(record.has_privileged)) + image.tobytes() + mask.tobytes()
            chunks.append(payload)
            chunks.append(_CRC.pack(zlib.crc32(payload)))
        blob = b"".join(chunks)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
        logger.info("corpus_written", path=str(path), records=len(records), classes=num_classes, bytes=len(blob))
        return len(blob)

    def read(self, path: Path) -> tuple[list[SampleRecord], int]:
        """Read a corpus file.

        Returns:
            The records in file order, and K.

        Raises:
            NotFoundError: If the file does not exist.
            CorpusHeaderError: On a bad magic, version or dimension.
            CorpusTruncatedError: If the file ends early.
            CorpusChecksumError: If a record's CRC32 does not match.
            CorpusFormatError: On trailing bytes or an inconsistent record.
        """
        if not path.is_file():
            raise NotFoundError(f"corpus file {path} does not exist")
        blob = path.read_bytes()
        num_classes, count, height, width = _decode_header(blob, path)

        size = record_size(height, width)
        expected = _HEADER.size + count * size
        if len(blob) < expected:
            raise CorpusTruncatedError(f"{path}: expected {expected} bytes for {count} records, found {len(blob)}")
        if len(blob) > expected:
            raise CorpusFormatError(f"{path}: {len(blob) - expected} trailing bytes after {count} records")

        pixels = height * width
        records: list[SampleRecord] = []
        offset = _HEADER.size
        for index in range(count):
            payload = blob[offset : offset + size - _CRC.size]
            (stored,) = _CRC.unpack_from(blob, offset + size - _CRC.size)
            if zlib.crc32(payload) != stored:
                raise CorpusChecksumError(f"{path}: record {index} fails its checksum")
            label, privileged = _RECORD_PREFIX.unpack_from(payload, 0)
            body = np.frombuffer(payload, dtype=np.uint8, offset=_RECORD_PREFIX.size)
            image = body[: 3 * pixels].reshape(height, width, 3).transpose(2, 0, 1) / 255.0
            mask = body[3 * pixels :].reshape(height, width).astype(np.float64)
            if label >= num_classes or privileged not in (0, 1) or not np.isin(mask, (0.0, 1.0)).all():
                raise CorpusFormatError(f"{path}: record {index} is inconsistent")
            try:
                records.append(
                    SampleRecord(
                        image=image,
                        label=int(label),
                        mask_fg=Mask(mask, MaskResolution.IMAGE, MaskPolarity.FOREGROUND),
                        has_privileged=bool(privileged),
                    )
                )
            except ValidationError as exc:
                raise CorpusFormatError(f"{path}: record {index}: {exc}") from exc
            offset += size
        logger.info("corpus_read", path=str(path), records=count, classes=num_classes)
        return records, int(num_classes)
