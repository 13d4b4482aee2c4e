"""
NNCKPT1 checkpoint files.

Layout: magic ``NNCKPT1\\n``, a little-endian uint32 byte length, a compact JSON
index ``[{name, shape, offset}]`` (offsets into the payload, in bytes), then the
concatenated little-endian float32 payloads.
"""
from __future__ import annotations

import json
import struct
from typing import Dict, Mapping, Union

import numpy as np

from ..error_handler import CheckpointError
from .layers import Module

MAGIC = b"NNCKPT1\n"


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    index = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(data.shape), "offset": offset})
        raw = data.tobytes()
        payload.append(raw)
        offset += len(raw)
    header = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(payload)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not an NNCKPT1 file (bad magic)", component="nn", operation="load_checkpoint")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise CheckpointError("truncated checkpoint header", component="nn", operation="load_checkpoint")
    (header_len,) = struct.unpack("<I", blob[pos:pos + 4])
    pos += 4
    try:
        index = json.loads(blob[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint index: {e}", component="nn", operation="load_checkpoint")
    payload = blob[pos + header_len:]
    out: Dict[str, np.ndarray] = {}
    for entry in index:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"payload for {entry['name']} is truncated", component="nn", operation="load_checkpoint")
        out[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).astype(np.float32)
    return out


def save_checkpoint(path: str, source: Union[Module, Mapping[str, np.ndarray]]) -> None:
    arrays = source.state_dict() if isinstance(source, Module) else source
    with open(path, "wb") as f:
        f.write(encode_checkpoint(arrays))


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}", component="nn", operation="load_checkpoint")
    return decode_checkpoint(blob)


def load_into(module: Module, path: str) -> Module:
    module.load_state_dict(load_checkpoint(path))
    return module
