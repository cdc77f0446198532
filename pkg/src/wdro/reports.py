"""Report serialization: repr-exact CSV and canonical JSON.

Everything here is built for byte-stable, round-trippable output:

* floats are written with ``repr``, the shortest form that parses back
  to the identical double;
* missing values are empty CSV cells and JSON ``null``;
* JSON is emitted with sorted keys, two-space indent, and a trailing
  newline;
* nothing records timestamps, hostnames, or other run-local noise, so
  two runs with the same config produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "format_cell",
    "parse_optional_float",
    "parse_optional_int",
    "write_csv",
    "read_csv",
    "canonical_json",
    "write_json",
    "read_json",
    "config_digest",
]


def format_cell(value) -> str:
    """One CSV cell. ``None`` becomes the empty cell; floats use repr."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def parse_optional_float(cell: str) -> Optional[float]:
    return None if cell == "" else float(cell)


def parse_optional_int(cell: str) -> Optional[int]:
    return None if cell == "" else int(cell)


def parse_bool(cell: str) -> bool:
    if cell not in ("true", "false"):
        raise ValueError(f"expected 'true' or 'false', got {cell!r}")
    return cell == "true"


def write_csv(path, header: Sequence[str], rows) -> None:
    """Write rows of mixed cells through :func:`format_cell`.

    Newlines are pinned to ``\\n`` so the bytes do not depend on the
    platform.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([format_cell(cell) for cell in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string rows; cell typing is the caller's schema."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = [row for row in reader]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(
                f"{path}: row {i + 2} has {len(row)} cells, "
                f"header has {len(header)}"
            )
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        # strict JSON has no NaN/inf; reports use null for "not defined"
        return value if np.isfinite(value) else None
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2,
                      allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def config_digest(obj, n_hex: int = 8) -> str:
    """Short content hash of a config mapping, used to name run dirs."""
    blob = canonical_json(obj).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:n_hex]
