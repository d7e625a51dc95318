"""Named float64 tensor container (``.lpst``).

Layout, all little-endian::

    b"LPST"  u16 version  u32 entry_count
    per entry:  u32 name_len  name (UTF-8)  u8 rank  u32 dims[rank]
                float64 payload[prod(dims)]  (row-major)
"""

from __future__ import annotations

import struct
from typing import Dict, Mapping

import numpy as np

MAGIC = b"LPST"
VERSION = 1


class TensorFileError(ValueError):
    pass


def save_tensors(path: str, tensors: Mapping[str, object]) -> None:
    """Write ``{name: array-like}``; Tensor objects are unwrapped."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise TensorFileError("duplicate tensor names")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(names))]
    for name in names:
        value = tensors[name]
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_tensors(path: str) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_tensors(buf, path)


def parse_tensors(buf: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TensorFileError(f"{source}: truncated at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise TensorFileError(f"{source}: bad magic, not an LPST file")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise TensorFileError(f"{source}: unsupported version {version}")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        if name in out:
            raise TensorFileError(f"{source}: duplicate entry {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise TensorFileError(f"{source}: {len(buf) - pos} trailing bytes")
    return out
