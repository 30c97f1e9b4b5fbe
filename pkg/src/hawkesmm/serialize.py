"""Deterministic text output: CSV writing with platform-stable float formatting.

All delimited artifacts use '.' decimal separator, UTF-8, LF line endings, a header
row, and 17 significant digits so identical inputs reproduce byte-identical files.
"""

from __future__ import annotations

import os
from typing import Iterable, Sequence


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (lossless decimal round trip)."""
    if isinstance(x, bool):  # pragma: no cover - defensive
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def csv_line(fields: Sequence[object]) -> str:
    return ",".join(f if isinstance(f, str) else fmt17(f) for f in fields)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """Write rows under a header; newline='' + explicit LF keeps bytes stable everywhere."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(csv_line(row) + "\n")
