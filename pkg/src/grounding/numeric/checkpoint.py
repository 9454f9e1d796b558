"""Binary parameter checkpoints.

Layout: ``b"EPNG0001"`` then, per parameter in lexicographic name order:
u32 name length, UTF-8 name, u32 rank, u32 extents, raw little-endian float64.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"EPNG0001"


class CheckpointError(ValueError):
    pass


def save_checkpoint(arrays: Mapping[str, np.ndarray], path) -> None:
    chunks = [MAGIC]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    pos = 8
    out: dict[str, np.ndarray] = {}

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    while pos < len(raw):
        (name_len,) = read("<I")
        if pos + name_len > len(raw):
            raise CheckpointError(f"{path}: truncated name at byte {pos}")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = read("<I")
        shape = read(f"<{rank}I") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    return out
