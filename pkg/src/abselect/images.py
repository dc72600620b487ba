"""Image decoding and deterministic PNG encoding.

Decoding goes through Pillow (PNG and JPEG; anything not 8-bit RGB is
converted on load).  Encoding is a minimal self-contained PNG writer so
diagnostic overlays are byte-stable across Pillow versions: one IDAT
chunk, filter type 0 on every scanline, fixed zlib level.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .rawcrop import ImageTensor

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def load_image(path: str | Path) -> ImageTensor:
    from PIL import Image

    path = Path(path)
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        pixels = np.asarray(rgb, dtype=np.uint8)
    return ImageTensor(pixels=pixels, source=path.name)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png(pixels: np.ndarray) -> bytes:
    """Encode (H, W, 3) uint8 pixels as deterministic PNG bytes."""
    p = np.asarray(pixels)
    if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {p.shape} {p.dtype}")
    h, w = p.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = np.concatenate([np.zeros((h, 1), dtype=np.uint8), p.reshape(h, w * 3)], axis=1)
    idat = zlib.compress(raw.tobytes(), 6)
    return _PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def write_png(pixels: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(pixels))
