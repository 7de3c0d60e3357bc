"""Flat binary serialization of model parameters.

Layout: magic "PURLAB1", then per layer
    uint32 name length, utf-8 name,
    uint32 rank, uint32 dims...,
    float64 little-endian data.
All integers little-endian. Layers appear in insertion order, so a
round trip preserves both values and ordering bit-for-bit.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from purlab.tensor import DiffTensor

MAGIC = b"PURLAB1"

__all__ = ["MAGIC", "save_params", "load_params", "file_sha256"]


def save_params(path, params: dict[str, DiffTensor]) -> None:
    blob = bytearray(MAGIC)
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        blob += struct.pack("<I", len(raw))
        blob += raw
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_params(path) -> dict[str, DiffTensor]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a PURLAB1 model file")
    out: dict[str, DiffTensor] = {}
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError(f"{path}: truncated model file at byte {pos}")
        piece = blob[pos:pos + n]
        pos += n
        return piece

    while pos < len(blob):
        name_len, = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        rank, = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        out[name] = DiffTensor(data.astype(np.float64))
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
