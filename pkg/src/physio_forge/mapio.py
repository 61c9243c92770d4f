"""Reader/writer for the ``PFMAP1`` binary array format.

Layout: 7 magic bytes ``b"PFMAP1\\0"`` plus one pad byte, a little-endian
uint32 rank, ``rank`` uint32 dimension sizes, then row-major float32 data.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"PFMAP1\x00"
HEADER = MAGIC + b"\x00"


def encode_map(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = HEADER + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def decode_map(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < 12 or blob[:7] != MAGIC:
        raise FormatError(f"{source}: bad magic, not a PFMAP1 file")
    (rank,) = struct.unpack_from("<I", blob, 8)
    offset = 12 + 4 * rank
    if len(blob) < offset:
        raise FormatError(f"{source}: truncated header (rank {rank})")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    expected = offset + 4 * int(np.prod(dims, dtype=np.int64))
    if len(blob) != expected:
        raise FormatError(f"{source}: size mismatch, expected {expected} bytes for shape {dims}, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=offset).reshape(dims).astype(np.float64)


def write_map(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_map(array))


def read_map(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode_map(blob, str(path))
