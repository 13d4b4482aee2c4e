"""
socialav input validation: numeric sanity checks and line-numbered file readers
"""
import csv
import json
import math
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .error_handler import DataFormatError, ValidationError
from .logging_utils import setup_logger

logger = setup_logger("socialav.validation")

HALF_PI = math.pi / 2.0


def validate_finite(
    name: str, values: Any, component: str = "validation", operation: str = "validate_finite"
) -> np.ndarray:
    """Reject NaN/inf with a diagnostic naming the offending quantity."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        where = "" if arr.ndim == 0 else f" at index {np.argwhere(~np.isfinite(arr))[0].tolist()}"
        raise ValidationError(f"{name} must be finite, got non-finite{where}", component=component, operation=operation)
    return arr


def validate_phi(phi: float) -> float:
    """Coordination tendency must lie in [0, pi/2]."""
    if not (0.0 <= phi <= HALF_PI + 1e-12):
        raise ValidationError(f"phi must be in [0, pi/2], got {phi}", component="validation", operation="validate_phi")
    return min(float(phi), HALF_PI)


def window_is_plausible(window: np.ndarray, max_step: float) -> bool:
    """True when no consecutive displacement exceeds ``max_step`` (same units as window)."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != 2 or len(window) < 2:
        return False
    if not np.all(np.isfinite(window)):
        return False
    steps = np.linalg.norm(np.diff(window, axis=0), axis=1)
    return bool(np.all(steps <= max_step))


def read_csv_rows(path: str, required_columns: Optional[Sequence[str]] = None) -> Tuple[List[str], List[Dict[str, str]]]:
    """Read a CSV file; malformed rows are rejected with their 1-based line number."""
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path} is empty", line_number=1, component="validation", operation="read_csv")
        if required_columns:
            missing = [c for c in required_columns if c not in header]
            if missing:
                raise DataFormatError(
                    f"{path} is missing columns {missing}", line_number=1,
                    component="validation", operation="read_csv",
                )
        rows: List[Dict[str, str]] = []
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: expected {len(header)} fields, found {len(row)}",
                    line_number=line_number, component="validation", operation="read_csv",
                )
            rows.append(dict(zip(header, row)))
    return header, rows


def parse_float(value: str, line_number: int, column: str) -> float:
    """Float parse that reports where the bad cell is."""
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataFormatError(
            f"column {column!r}: {value!r} is not a number",
            line_number=line_number, component="validation", operation="parse_float",
        )


def iter_json_lines(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line_number, object) for each non-empty JSON line."""
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(
                    f"{path}: invalid JSON ({e.msg})", line_number=line_number,
                    component="validation", operation="iter_json_lines",
                )
            if not isinstance(obj, dict):
                raise DataFormatError(
                    f"{path}: expected a JSON object", line_number=line_number,
                    component="validation", operation="iter_json_lines",
                )
            yield line_number, obj


def require_keys(obj: Dict[str, Any], keys: Iterable[str], line_number: int) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise DataFormatError(
            f"missing fields {missing}", line_number=line_number,
            component="validation", operation="require_keys",
        )
