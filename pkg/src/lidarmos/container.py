"""Flat little-endian float32 container for image-like artifacts.

Layout: 4-byte magic ``LMF1``, then ``h, w, c`` as little-endian uint32, then
``h * w * c`` float32 values in row-major ``(h, w, c)`` order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"LMF1"
_HEADER = struct.Struct("<4s3I")


def dumps(arr) -> bytes:
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise FormatError(f"container holds h x w x c arrays, got shape {a.shape}")
    h, w, c = a.shape
    return _HEADER.pack(MAGIC, h, w, c) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def loads(raw: bytes) -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise FormatError("container shorter than its header")
    magic, h, w, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"unknown container magic {magic!r}")
    n = h * w * c
    if len(raw) != _HEADER.size + 4 * n:
        raise FormatError(f"payload is {len(raw) - _HEADER.size} bytes, header implies {4 * n}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)


def write(path, arr) -> None:
    Path(path).write_bytes(dumps(arr))


def read(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return loads(raw)
