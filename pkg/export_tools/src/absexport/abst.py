"""Writer/reader for the engine's ABST tensor container.

Implemented independently of the engine on purpose: the two sides of the
wire format check each other.  Layout: magic ABST, version u8=1, dtype
u8 (0=f32, 1=u8), rank u8, rank x u64 little-endian extents, row-major
little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def write_abst(arr: np.ndarray, path: str | Path) -> None:
    a = np.asarray(arr)
    if a.dtype.kind == "f":
        a = np.ascontiguousarray(a, dtype="<f4")
        if not np.all(np.isfinite(a)):
            raise ValueError("refusing to write non-finite float payload")
        code = 0
    elif a.dtype == np.uint8:
        a = np.ascontiguousarray(a)
        code = 1
    else:
        raise ValueError(f"unsupported dtype {a.dtype}")
    if a.ndim < 1 or any(s < 1 for s in a.shape):
        raise ValueError(f"invalid shape {a.shape}")
    header = b"ABST" + struct.pack("<BBB", 1, code, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def read_abst(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != b"ABST":
        raise ValueError(f"{path}: not an ABST file")
    version, code, rank = struct.unpack("<BBB", raw[4:7])
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    dtype = {0: np.dtype("<f4"), 1: np.dtype("u1")}[code]
    shape = struct.unpack(f"<{rank}Q", raw[7 : 7 + 8 * rank])
    return np.frombuffer(raw[7 + 8 * rank :], dtype=dtype).reshape(shape).copy()
