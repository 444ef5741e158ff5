"""Versioned binary container for named float64 arrays.

Layout: magic string, format version, JSON metadata block, then one record
per array (name, shape, little-endian float64 data). Used both for frozen
model checkpoints and for trained prompt bundles.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CTPTREC1"
VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def save_records(path: str | Path, metadata: dict, records: dict[str, np.ndarray]) -> None:
    """Write metadata and named arrays; overwrites any existing file."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(_U32.pack(len(meta)))
    buf.write(meta)
    buf.write(_U32.pack(len(records)))
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(_U32.pack(len(encoded)))
        buf.write(encoded)
        buf.write(_U32.pack(arr.ndim))
        for dim in arr.shape:
            buf.write(_U64.pack(dim))
        buf.write(arr.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated container while reading {what}")
    return data


def load_records(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (metadata, records); raises FormatError on any corruption."""
    raw = Path(path).read_bytes()
    f = io.BytesIO(raw)
    magic = _read_exact(f, len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = _U32.unpack(_read_exact(f, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}, expected {VERSION}")
    (meta_len,) = _U32.unpack(_read_exact(f, 4, "metadata length"))
    try:
        metadata = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata block: {exc}") from exc
    (count,) = _U32.unpack(_read_exact(f, 4, "record count"))
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = _U32.unpack(_read_exact(f, 4, "record name length"))
        name = _read_exact(f, name_len, "record name").decode("utf-8")
        (ndim,) = _U32.unpack(_read_exact(f, 4, f"rank of {name}"))
        shape = tuple(_U64.unpack(_read_exact(f, 8, f"shape of {name}"))[0] for _ in range(ndim))
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        data = _read_exact(f, nbytes, f"data of {name}")
        records[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    if f.read(1):
        raise FormatError("trailing bytes after final record")
    return metadata, records
