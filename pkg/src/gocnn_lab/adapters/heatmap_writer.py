"""Binary PGM (P5, maxval 255) heatmaps with a raw-value CSV next to each."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from gocnn_lab.core.tensor import FloatArray
from gocnn_lab.errors import ValidationError


def to_gray8(heatmap: FloatArray) -> np.ndarray:
    """Quantize a [0, 1] map to 8-bit gray levels."""
    return np.round(np.clip(heatmap, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(heatmap: FloatArray) -> bytes:
    if heatmap.ndim != 2:
        raise ValidationError(f"heatmap must be 2-D, got shape {heatmap.shape}")
    height, width = heatmap.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + to_gray8(heatmap).tobytes()


def decode_pgm(blob: bytes) -> np.ndarray:
    """Parse a binary PGM into a uint8 array.

    Raises:
        ValidationError: If the bytes are not a P5 image with maxval ≤ 255.
    """
    tokens: list[bytes] = []
    offset = 0
    while len(tokens) < 4:
        while offset < len(blob) and blob[offset : offset + 1].isspace():
            offset += 1
        if blob[offset : offset + 1] == b"#":
            while offset < len(blob) and blob[offset : offset + 1] != b"\n":
                offset += 1
            continue
        start = offset
        while offset < len(blob) and not blob[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise ValidationError("PGM header is incomplete")
        tokens.append(blob[start:offset])
    offset += 1
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5" or not 0 < maxval <= 255:
        raise ValidationError("not a binary PGM with 8-bit samples")
    pixels = blob[offset : offset + width * height]
    if len(pixels) != width * height:
        raise ValidationError("PGM raster is truncated")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


class PgmHeatmapWriter:
    """Writes ``<stem>.pgm`` (normalized map) and ``<stem>.csv`` (raw values)."""

    def write(self, heatmap: FloatArray, raw: FloatArray, stem: Path) -> list[Path]:
        stem.parent.mkdir(parents=True, exist_ok=True)
        pgm = stem.with_suffix(".pgm")
        pgm.write_bytes(encode_pgm(heatmap))
        table = stem.with_suffix(".csv")
        with table.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            for row in raw:
                writer.writerow([repr(float(value)) for value in row])
        return [pgm, table]
