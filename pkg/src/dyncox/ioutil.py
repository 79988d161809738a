"""Small file-writing helpers: atomic replace and stable float formatting."""

from __future__ import annotations

import os
import tempfile
from typing import Iterable, Sequence


def fmt(x) -> str:
    """Format a value for CSV output; floats keep full precision."""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def atomic_write_text(path: str, text: str) -> None:
    """Write text to ``path`` via a temp file + rename so readers never see
    a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Atomically write rows of already-ordered values as CSV."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
