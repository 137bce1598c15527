"""Named-tensor checkpoints in a fixed little-endian binary layout.

Layout::

    b"GVT1" | version u32 | count u32
    per tensor: name_len u16 | utf-8 name | rank u8 | dims u32 * rank | float32 data
    checksum u64 = sum of all preceding bytes mod 2**64
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

MAGIC = b"GVT1"
VERSION = 1


def _checksum(buf: bytes) -> int:
    return int(np.frombuffer(buf, dtype=np.uint8).sum(dtype=np.uint64)) % (1 << 64)


def encode(tensors: dict) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(tensors)))
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr).tobytes())
    body = out.getvalue()
    return body + struct.pack("<Q", _checksum(body))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 20 or buf[:4] != MAGIC:
        raise FormatError("not a GVT1 checkpoint")
    body, (stored,) = buf[:-8], struct.unpack("<Q", buf[-8:])
    if _checksum(body) != stored:
        raise FormatError("checkpoint checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(body):
                raise FormatError(f"tensor {name!r} truncated")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise FormatError("checkpoint truncated") from exc
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes after last tensor")
    return tensors


def save_checkpoint(path, tensors: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(tensors))
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def load_into(params: dict, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameters, requiring identical names and shapes."""
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise FormatError(f"checkpoint names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in params.items():
        if p.shape != arrays[name].shape:
            raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape}, model {p.shape}")
        p.data[...] = arrays[name]
