"""Atomic file writing shared by every writer in the package."""

import os
import tempfile
from pathlib import Path

from .errors import IoFailure


def atomic_write(path, payload):
    """Write ``payload`` (bytes or str) to ``path`` via temp file + rename."""
    path = Path(path)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise IoFailure(f"cannot write to {directory}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"failed writing {path}: {exc}") from exc
