"""Flat binary weight container.

Layout (all integers little-endian uint32)::

    b"MADW" | version | tensor count
    per tensor: name length | utf-8 name | rank | dims... | f32 payload
"""
from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"MADW"
VERSION = 1


def dumps(tensors):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob):
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ValueError("not a weight container (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise ValueError(f"unsupported weight container version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", view, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", view, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(view, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        out[name] = arr.astype(np.float32)
    if pos != len(view):
        raise ValueError(f"{len(view) - pos} trailing bytes in weight container")
    return out


def save_weights(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load_weights(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
