#!/usr/bin/env python3
"""
socialav utilities - project paths, run directories and canonical JSON/hash helpers
"""
import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence, Union

PathLike = Union[str, "os.PathLike[str]"]

RUN_SUBDIRS = ("checkpoints", "report")


def get_project_root() -> Path:
    """Get the project root directory as a Path object"""
    return Path(__file__).parent.parent.parent


def get_config_path() -> Path:
    """Get the default config file path"""
    return get_project_root() / "config" / "config.yaml"


def ensure_run_dir(out: PathLike) -> Path:
    """Create ``out`` with the fixed run-directory layout (checkpoints/, report/)."""
    run_dir = Path(out)
    run_dir.mkdir(parents=True, exist_ok=True)
    for sub in RUN_SUBDIRS:
        (run_dir / sub).mkdir(exist_ok=True)
    return run_dir


def canonical_json(obj: Any) -> str:
    """Key-sorted JSON with a stable float repr; equal objects give equal text."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def write_json(path: PathLike, obj: Any) -> None:
    with open(path, "w") as f:
        f.write(canonical_json(obj))
        f.write("\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r") as f:
        return json.load(f)


def config_hash(obj: Dict[str, Any]) -> str:
    """sha256 over the canonical JSON of a config mapping."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def format_cell(value: Any) -> str:
    """CSV cell text: ints verbatim, floats in repr form, None as empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(c)) for c in columns])


__all__ = [
    "get_project_root",
    "get_config_path",
    "ensure_run_dir",
    "canonical_json",
    "write_json",
    "read_json",
    "config_hash",
    "file_sha256",
    "format_cell",
    "write_csv",
]
