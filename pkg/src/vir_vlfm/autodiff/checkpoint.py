"""Named-tensor checkpoint files.

Layout (all integers little-endian)::

    b"VIRT0001"
    repeated until EOF:
        u32 name_length, name (UTF-8)
        u32 rank
        u64 dims[rank]
        f64 values[prod(dims)]
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"VIRT0001"


class CheckpointError(ValueError):
    pass


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:8]!r}, expected {MAGIC!r}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointError(f"truncated values for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    return out


def save(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
