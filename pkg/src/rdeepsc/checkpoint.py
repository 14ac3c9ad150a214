"""Binary checkpoint format.

Layout (little-endian): magic ``RDSC``, u32 version, u32 metadata length,
UTF-8 JSON metadata, u32 tensor count, then per tensor: u16 name length,
name, u8 rank, u32 dims, float32 payload.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RDSC"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint file."""


class DimensionMismatch(CheckpointError):
    pass


def encode(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    out = io.BytesIO()
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
    out.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f4")
        out.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr).tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not an RDSC checkpoint")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, this build reads {VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = payload.astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return tensors, meta


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(tensors, meta))
    tmp.replace(path)


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())


def check_shapes(tensors: dict[str, np.ndarray], expected: dict[str, tuple[int, ...]]) -> None:
    """Raise naming the first tensor whose shape or presence disagrees with ``expected``."""
    for name, shape in expected.items():
        if name not in tensors:
            raise DimensionMismatch(f"checkpoint lacks tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(shape):
            raise DimensionMismatch(
                f"tensor {name!r}: checkpoint has {tuple(tensors[name].shape)}, model expects {tuple(shape)}"
            )


def to_float32(x: np.ndarray) -> np.ndarray:
    """Round float64 values to the nearest float32 while keeping dtype float64."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)
