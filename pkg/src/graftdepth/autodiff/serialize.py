"""EPCT binary tensor files.

Layout: magic ``EPCT``, u16 version, u16 rank, rank x u32 dims, then
little-endian float32 values in row-major order.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"EPCT"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array), dtype="<f4")
    head = MAGIC + struct.pack("<HH", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("not an EPCT tensor (bad magic)")
    version, rank = struct.unpack_from("<HH", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported EPCT version {version}")
    off = 8 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated EPCT header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != off + 4 * count:
        raise FormatError(f"EPCT payload has {len(buf) - off} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)


def save(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as f:
        f.write(dumps(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return loads(f.read())
