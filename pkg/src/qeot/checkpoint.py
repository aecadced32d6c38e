"""Flat binary checkpoint archive.

Layout (all integers little-endian unsigned 32-bit unless noted):

    magic   8 bytes  b"QEOTCKPT"
    version u32      currently 1
    count   u32      number of records
    record*:
        name_len u32, name utf-8 bytes
        ndim u32, dims u32 * ndim
        data float64 little-endian, row-major

Records are written in sorted-name order, so a given set of arrays
always produces identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"QEOTCKPT"
VERSION = 1


def save_records(path: str, records: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(records)))
        for name in sorted(records):
            arr = np.ascontiguousarray(records[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_records(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a qeot checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    records: dict[str, np.ndarray] = {}
    off = 16
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            records[name] = data.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if off != len(blob):
        raise DataError(f"{path}: {len(blob) - off} trailing bytes after {count} records")
    return records
