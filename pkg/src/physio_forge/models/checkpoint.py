"""Single-file checkpoints.

Layout: magic ``b"PFCKPT1\\0"``, a uint32-length-prefixed UTF-8 config record,
then named tensors until EOF, each as (uint32 name length, name bytes,
uint32 rank, rank x uint32 dims, float32 data). All integers little-endian.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from ..errors import FormatError

MAGIC = b"PFCKPT1\x00"


def encode_checkpoint(config_text: str, state: dict[str, np.ndarray]) -> bytes:
    cfg = config_text.encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(cfg)), cfg]
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> tuple[str, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise FormatError(f"{source}: bad magic, not a PFCKPT1 checkpoint")
    try:
        (n,) = struct.unpack_from("<I", blob, 8)
        pos = 12 + n
        if pos > len(blob):
            raise FormatError(f"{source}: truncated config record")
        config_text = blob[12:pos].decode("utf-8")
        state: dict[str, np.ndarray] = {}
        while pos < len(blob):
            (ln,) = struct.unpack_from("<I", blob, pos)
            name = blob[pos + 4 : pos + 4 + ln].decode("utf-8")
            pos += 4 + ln
            (rank,) = struct.unpack_from("<I", blob, pos)
            dims = struct.unpack_from(f"<{rank}I", blob, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            end = pos + 4 * count
            if end > len(blob):
                raise FormatError(f"{source}: truncated tensor {name!r}")
            state[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{source}: corrupt checkpoint ({exc})") from exc
    return config_text, state


def save_checkpoint(path: str | os.PathLike, config_text: str, state: dict[str, np.ndarray]) -> None:
    """Write atomically: a partial file is never left at ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_checkpoint(config_text, state))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode_checkpoint(blob, os.fspath(path))
