"""NTCK parameter checkpoints.

Layout (little-endian): magic ``NTCK``, u32 version, u32 count, then per
parameter: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f64 data.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"NTCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if off + 8 * n > len(buf):
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)
            off += 8 * n
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def assign_params(params: Mapping[str, Tensor], values: Mapping[str, np.ndarray]) -> None:
    """Copy loaded arrays into live tensors, checking names and shapes."""
    missing = set(params) - set(values)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    for name, t in params.items():
        v = values[name]
        if v.shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {v.shape}, model {t.shape}")
        t.data[...] = v
