"""GOCNN1 checkpoint files and their plain-text manifest.

Checkpoint layout, little-endian, tensors in model parameter order until EOF:

    b"GOCNN1"
    per tensor: u32 name length | UTF-8 name | u32 rank | rank × u32 dims | f64 data (row-major)

The manifest lives next to it at ``<checkpoint>.manifest`` as ``key = value`` lines.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from gocnn_lab.core.tensor import FloatArray
from gocnn_lab.errors import CheckpointFormatError, NotFoundError
from gocnn_lab.observability import get_logger

logger = get_logger(__name__)

MAGIC = b"GOCNN1"
_U32 = struct.Struct("<I")


def manifest_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".manifest")


def format_manifest(manifest: Mapping[str, str]) -> str:
    lines = []
    for key, value in manifest.items():
        if "\n" in value or "=" in key:
            raise CheckpointFormatError(f"manifest entry {key!r} cannot be written on one line")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict[str, str]:
    manifest: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"manifest line {number} has no '='")
        manifest[key.strip()] = value.strip()
    return manifest


class CheckpointStore:
    """Reads and writes named float64 tensors plus a manifest."""

    def save(self, tensors: Mapping[str, FloatArray], manifest: Mapping[str, str], path: Path) -> None:
        chunks = [MAGIC]
        for name, array in tensors.items():
            encoded = name.encode("utf-8")
            data = np.ascontiguousarray(array, dtype="<f8")
            chunks.append(_U32.pack(len(encoded)) + encoded + _U32.pack(data.ndim))
            chunks.extend(_U32.pack(dim) for dim in data.shape)
            chunks.append(data.tobytes())
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
        manifest_path(path).write_text(format_manifest(manifest), encoding="utf-8")
        logger.info("checkpoint_saved", path=str(path), tensors=len(tensors))

    def load(self, path: Path) -> tuple[dict[str, FloatArray], dict[str, str]]:
        """Load tensors and manifest.

        Raises:
            NotFoundError: If the checkpoint or its manifest is missing.
            CheckpointFormatError: If either cannot be decoded.
        """
        sidecar = manifest_path(path)
        if not path.is_file():
            raise NotFoundError(f"checkpoint {path} does not exist")
        if not sidecar.is_file():
            raise NotFoundError(f"checkpoint manifest {sidecar} does not exist")
        blob = path.read_bytes()
        if not blob.startswith(MAGIC):
            raise CheckpointFormatError(f"{path}: bad magic")
        tensors: dict[str, FloatArray] = {}
        offset = len(MAGIC)
        try:
            while offset < len(blob):
                (length,) = _U32.unpack_from(blob, offset)
                offset += _U32.size
                name = blob[offset : offset + length].decode("utf-8")
                offset += length
                (rank,) = _U32.unpack_from(blob, offset)
                offset += _U32.size
                shape = struct.unpack_from(f"<{rank}I", blob, offset)
                offset += rank * _U32.size
                count = int(np.prod(shape, dtype=np.int64))
                end = offset + 8 * count
                if end > len(blob):
                    raise CheckpointFormatError(f"{path}: tensor {name!r} is truncated")
                tensors[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
                offset = end
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: cannot decode tensor table: {exc}") from exc
        manifest = parse_manifest(sidecar.read_text(encoding="utf-8"))
        logger.info("checkpoint_loaded", path=str(path), tensors=len(tensors))
        return tensors, manifest
