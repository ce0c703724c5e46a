"""Checkpoint container: JSON header plus raw float32 tensors.

Layout: a little-endian u32 header length, the UTF-8 JSON header, then the
tensors back to back as little-endian float32 in the order declared by the
header's ``tensors`` list. Metadata keys ride along in the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict) -> None:
    header = dict(meta)
    header["tensors"] = [
        {"name": name, "shape": list(t.shape)} for name, t in tensors.items()
    ]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in tensors:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated checkpoint")
    (header_len,) = struct.unpack_from("<I", raw)
    if len(raw) < 4 + header_len:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[4:4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header: {exc}") from None
    declared = header.pop("tensors", None)
    if not isinstance(declared, list):
        raise FormatError(f"{path}: header does not declare tensors")
    tensors: dict[str, np.ndarray] = {}
    offset = 4 + header_len
    for entry in declared:
        shape = tuple(int(x) for x in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor {entry['name']}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = data.reshape(shape).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after declared tensors")
    return tensors, header


__all__ = ["save_checkpoint", "load_checkpoint"]
