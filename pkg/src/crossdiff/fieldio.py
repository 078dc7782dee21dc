"""XDIF field files.

Layout, all little-endian::

    b"XDIF"                 magic
    uint32                  format version (1)
    uint32                  number of axes d
    uint32 * d              node counts per axis
    float64 * prod(counts)  U, first axis fastest
    float64 * prod(counts)  V, same ordering
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"XDIF"
VERSION = 1


class FieldFormatError(ValueError):
    pass


def encode(U: np.ndarray, V: np.ndarray) -> bytes:
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape != V.shape:
        raise ValueError(f"U and V shapes differ: {U.shape} vs {V.shape}")
    if U.ndim < 1:
        raise ValueError("fields need at least one axis")
    header = MAGIC + struct.pack("<II", VERSION, U.ndim) + struct.pack(f"<{U.ndim}I", *U.shape)
    body = U.astype("<f8").ravel(order="F").tobytes() + V.astype("<f8").ravel(order="F").tobytes()
    return header + body


def decode(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FieldFormatError("not an XDIF file (bad magic)")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FieldFormatError(f"unsupported XDIF version {version}")
    if not 1 <= ndim <= 8:
        raise FieldFormatError(f"implausible axis count {ndim}")
    offset = 12 + 4 * ndim
    if len(data) < offset:
        raise FieldFormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    count = int(np.prod(shape))
    if len(data) != offset + 16 * count:
        raise FieldFormatError(f"expected {offset + 16 * count} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    U = values[:count].reshape(shape, order="F")
    V = values[count:].reshape(shape, order="F")
    return U, V


def write_fields(path, U, V) -> None:
    Path(path).write_bytes(encode(U, V))


def read_fields(path) -> tuple[np.ndarray, np.ndarray]:
    return decode(Path(path).read_bytes())
