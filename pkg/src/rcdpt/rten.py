"""RTEN: a minimal portable tensor file format.

Layout: ``b"RTEN"``, version byte, dtype byte, rank byte, ``rank`` little-endian
uint64 dims, then the row-major payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"RTEN"
VERSION = 0x01
_DTYPES = {0x01: np.dtype("<f4"), 0x02: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class RtenFormatError(ValueError):
    """The bytes on disk are not a valid RTEN tensor."""


def dumps(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        if arr.dtype.kind not in "fiub":
            raise TypeError(f"cannot store dtype {arr.dtype} in RTEN")
        dt = np.dtype("<f4")
    if arr.ndim > 255:
        raise ValueError("rank exceeds 255")
    header = MAGIC + bytes([VERSION, _CODES[dt], arr.ndim]) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def loads(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise RtenFormatError(f"{source}: bad magic, not an RTEN file")
    version, code, rank = buf[4], buf[5], buf[6]
    if version != VERSION:
        raise RtenFormatError(f"{source}: unsupported RTEN version {version}")
    if code not in _DTYPES:
        raise RtenFormatError(f"{source}: unknown dtype code {code:#04x}")
    head = 7 + 8 * rank
    if len(buf) < head:
        raise RtenFormatError(f"{source}: truncated header")
    shape = struct.unpack(f"<{rank}Q", buf[7:head])
    dt = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = buf[head:]
    if len(payload) != expected:
        raise RtenFormatError(f"{source}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arr))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read(), source=os.fspath(path))
