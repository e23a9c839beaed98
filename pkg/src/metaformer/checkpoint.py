"""Flat binary weight container.

Layout: magic `MFW1`, version u32, parameter count u32, then per parameter:
name length u16, name bytes (utf-8), rank u8, dims as u32s, and the values as
little-endian float32. Round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFW1"
VERSION = 1


def save_weights(named: list[tuple[str, np.ndarray]], path: str | Path) -> None:
    """Write (name, array) pairs in the given order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(named)))
        for name, value in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            value = np.asarray(value)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    """Read a container back into name -> float32 array (order preserved)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a weight container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(dims)
        offset += 4 * n
        if name in out:
            raise ValueError(f"{path}: duplicate parameter name {name!r}")
        out[name] = values.copy()
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after last parameter")
    return out
