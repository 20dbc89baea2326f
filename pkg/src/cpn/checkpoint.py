"""Binary parameter checkpoints.

Layout (little-endian): magic ``CPNW``, u32 format version, then for each
parameter: u32 name length, UTF-8 name, u32 rank, rank x u32 extents and the
float64 values in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CPNW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, params: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a CPNW checkpoint")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    while pos < len(buf):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated name at byte {pos}")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(buf):
            raise CheckpointError(f"{path}: truncated values for {name!r}")
        values = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        params[name] = values.astype(np.float64).reshape(shape)
    return params
