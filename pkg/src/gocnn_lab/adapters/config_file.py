"""Plain-text ``key = value`` configuration files for the CLI."""

from __future__ import annotations

from pathlib import Path

from gocnn_lab.errors import NotFoundError, ValidationError


def read_config_file(path: Path) -> dict[str, str]:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment.

    Keys are normalized to underscore form, so ``per-class`` and ``per_class`` agree.

    Raises:
        NotFoundError: If the file does not exist.
        ValidationError: On a line without ``=``, an empty key, or a repeated key.
    """
    if not path.is_file():
        raise NotFoundError(f"config file {path} does not exist")
    entries: dict[str, str] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lstrip("-").replace("-", "_")
        if not sep or not key:
            raise ValidationError(f"{path}:{number}: expected 'key = value'")
        if key in entries:
            raise ValidationError(f"{path}:{number}: key {key!r} is repeated")
        entries[key] = value.strip()
    return entries
