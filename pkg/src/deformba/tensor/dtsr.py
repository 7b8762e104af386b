"""DTSR v1 tensor files.

Layout: 8-byte magic ``DTENSR01``, u32 LE rank, rank x u64 LE extents, then
the row-major little-endian float64 payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .core import Tensor

MAGIC = b"DTENSR01"


class DTSRError(ValueError):
    pass


def dumps(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def loads(buf: bytes) -> Tensor:
    if buf[:8] != MAGIC:
        raise DTSRError("bad magic, not a DTSR v1 file")
    if len(buf) < 12:
        raise DTSRError("truncated header")
    (rank,) = struct.unpack_from("<I", buf, 8)
    off = 12 + 8 * rank
    if len(buf) < off:
        raise DTSRError("truncated header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 8 * n:
        raise DTSRError(f"payload holds {(len(buf) - off) / 8} values, shape {shape} needs {n}")
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
    return Tensor(arr)


def save(path: str | os.PathLike, t: Tensor | np.ndarray) -> None:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(t))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Tensor:
    return loads(Path(path).read_bytes())
