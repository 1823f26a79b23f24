"""Deterministic text serialization helpers.

Result files must be byte-identical across repeated runs and thread counts,
so every writer here uses `repr`-style shortest round-trip floats, LF line
endings, and no timestamps.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Sequence


def format_number(x) -> str:
    """Shortest exact decimal form of a float/int (round-trips via float())."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_number(v) if not isinstance(v, str) else v for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_json(obj) -> str:
    """Canonical JSON text: 2-space indent, preserved key order, LF-terminated."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_json(path: str | os.PathLike, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_json(obj))


def read_json(path: str | os.PathLike):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
