"""Shared numeric kernels and the ABST tensor file container.

ABST is a minimal language-neutral binary format for dense row-major
tensors, used for fixtures, catalogs and cross-tool exchange:

    bytes 0..3   magic  b"ABST"
    byte  4      format version, currently 1
    byte  5      dtype code: 0 = float32, 1 = uint8
    byte  6      rank (number of dimensions, >= 1)
    then         rank x uint64 little-endian extents
    then         raw row-major payload, little-endian

All multi-byte values are little-endian.  float32 payloads must be
finite; NaN or Inf anywhere is a format violation.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ABST"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR_KIND = {"f": 0, "u": 1}


class TensorFormatError(ValueError):
    """Raised when an ABST file is malformed; the message names the bad field."""


class DegenerateVectorError(ValueError):
    """Raised when a vector with near-zero norm is asked to be normalized."""


def write_tensor(tensor: np.ndarray, path: str | Path) -> None:
    """Serialize a float32 or uint8 array to an ABST file.

    The array is converted to the closest supported dtype (float -> f32,
    unsigned ints -> u8).  Round-trips bit-exactly through ``read_tensor``.
    """
    arr = np.asarray(tensor)
    if arr.dtype.kind == "f":
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise TensorFormatError("payload: float32 tensor contains NaN or Inf")
        code = 0
    elif arr.dtype.kind == "u" or arr.dtype.kind == "i":
        if arr.dtype.kind == "i" and (arr.min(initial=0) < 0 or arr.max(initial=0) > 255):
            raise TensorFormatError("payload: integer values outside uint8 range")
        arr = np.ascontiguousarray(arr, dtype="u1")
        code = 1
    else:
        raise TensorFormatError(f"dtype: unsupported array dtype {arr.dtype}")
    if arr.ndim < 1:
        arr = arr.reshape(1)
    if any(s < 1 for s in arr.shape):
        raise TensorFormatError(f"shape: all extents must be >= 1, got {arr.shape}")

    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Load an ABST file, validating every header field and the payload size."""
    raw = Path(path).read_bytes()
    if len(raw) < 7:
        raise TensorFormatError("header: file shorter than the fixed header")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"magic: expected {MAGIC!r}, found {raw[:4]!r}")
    version, code, rank = struct.unpack("<BBB", raw[4:7])
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"version: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"dtype: unsupported dtype code {code}")
    if rank < 1:
        raise TensorFormatError("rank: must be >= 1")
    shape_end = 7 + 8 * rank
    if len(raw) < shape_end:
        raise TensorFormatError("shape: truncated shape block")
    shape = struct.unpack(f"<{rank}Q", raw[7:shape_end])
    if any(s < 1 for s in shape):
        raise TensorFormatError(f"shape: all extents must be >= 1, got {shape}")
    dtype = _DTYPE_CODES[code]
    count = math.prod(shape)
    expected = shape_end + count * dtype.itemsize
    if len(raw) != expected:
        raise TensorFormatError(
            f"payload: expected {expected - shape_end} bytes, found {len(raw) - shape_end}"
        )
    arr = np.frombuffer(raw[shape_end:], dtype=dtype).reshape(shape)
    if code == 0 and not np.all(np.isfinite(arr)):
        raise TensorFormatError("payload: float32 tensor contains NaN or Inf")
    return arr.copy()


def softmax(values, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax, max-subtracted for overflow safety.

    Computes exp((v_i - max v) / temperature) / sum_j exp((v_j - max v) / temperature).
    Outputs are strictly positive, sum to 1, and preserve the input ordering.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax requires a non-empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax requires finite inputs")
    if not temperature > 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    z = np.exp((v - v.max()) / temperature)
    return z / z.sum()


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction."""
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm <= 1e-12:
        raise DegenerateVectorError(f"cannot normalize vector with norm {norm}")
    return arr / norm


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic convolution kernel (Keys, a = -0.5)."""
    a = -0.5
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    out = np.zeros_like(t)
    near = t <= 1.0
    out[near] = (a + 2.0) * t3[near] - (a + 3.0) * t2[near] + 1.0
    mid = (t > 1.0) & (t < 2.0)
    out[mid] = a * t3[mid] - 5.0 * a * t2[mid] + 8.0 * a * t[mid] - 4.0 * a
    return out


def _resample_weights(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) weight matrix for 1-D cubic resampling.

    Output sample i reads source coordinate (i + 0.5) * n_in / n_out - 0.5
    (half-pixel center alignment); out-of-range taps are clamped to the
    border sample, accumulating their weight there.
    """
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    for offset in range(-1, 3):
        taps = np.clip(base + offset, 0, n_in - 1)
        weights = _cubic_kernel(frac - offset)
        np.add.at(w, (np.arange(n_out), taps), weights)
    return w


def bicubic_resample_2d(plane, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2-D plane to (out_h, out_w) with the pinned bicubic kernel.

    Kernel: Catmull-Rom a = -0.5, half-pixel center alignment, edge-clamped
    borders.  Equal input and output dimensions return an exact copy.
    Linear in the input by construction (a fixed separable weight matrix).
    """
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {p.shape}")
    h, w = p.shape
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise ValueError("all dimensions must be >= 1")
    if (h, w) == (out_h, out_w):
        return p.copy()
    rows = _resample_weights(h, out_h) if h != out_h else None
    cols = _resample_weights(w, out_w) if w != out_w else None
    out = p
    if rows is not None:
        out = rows @ out
    if cols is not None:
        out = out @ cols.T
    return out
