"""Versioned binary container shared by nets, eigenfunction bases and lifted models.

Layout (little-endian)::

    b"KDMD" | u16 version | u16 entry count | entries...
    entry := u16 name length | name (utf-8) | u8 ndim | u32 shape[ndim] | f64 data (row-major)
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"KDMD"
VERSION = 1


def pack_arrays(arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<HH", VERSION, len(arrays))]
    for name, value in arrays.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def unpack_arrays(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise FormatError("missing KDMD magic bytes")
    try:
        version, count = struct.unpack_from("<HH", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        off = 8
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=off)
            off += 8 * size
            out[name] = data.reshape(shape).astype(float)
    except struct.error as exc:
        raise FormatError(f"truncated container: {exc}") from exc
    if off != len(blob):
        raise FormatError("trailing bytes after last entry")
    return out
