"""Feature-space crop selection.

The pre-final-layer patch tokens of the full image form a 2-D token
grid.  Each pixel-space crop box maps to the corresponding token
sub-block, which is cropped, bicubic-resampled back to the full grid
size per channel, and reassembled with the untouched class token into
the sequence layout the encoder suffix expects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import core
from .rawcrop import CropBox, round_half_up


@dataclass(frozen=True)
class TokenGrid:
    """Patch-token features (rows, cols, d_model) plus the class token."""

    tokens: np.ndarray
    cls: np.ndarray
    source_layer: int = -1

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=np.float64)
        c = np.asarray(self.cls, dtype=np.float64)
        if t.ndim != 3:
            raise ValueError(f"expected (rows, cols, d_model) tokens, got {t.shape}")
        if c.ndim != 1 or c.shape[0] != t.shape[2]:
            raise ValueError(f"cls dim {c.shape} does not match token width {t.shape[2]}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(c))):
            raise ValueError("token grid must be finite")
        object.__setattr__(self, "tokens", t)
        object.__setattr__(self, "cls", c)

    @property
    def grid(self) -> tuple[int, int]:
        return self.tokens.shape[0], self.tokens.shape[1]

    @property
    def d_model(self) -> int:
        return self.tokens.shape[2]


@dataclass(frozen=True)
class TokenBox:
    """A sub-block of the token grid, with its pixel-box provenance."""

    r0: int
    c0: int
    rows: int
    cols: int
    source: CropBox | None = None


def map_box_to_tokens(
    box: CropBox, image: tuple[int, int], grid: tuple[int, int]
) -> TokenBox:
    """Map a pixel box to token units by fractional position.

    r0 = floor(y0 * rows / H), rows = max(1, round(height * rows / H)),
    and likewise for columns; the result is clipped to the grid.  A box
    smaller than one patch still selects a single token.
    """
    w, h = image
    g_r, g_c = grid
    r0 = min(int(math.floor(box.y0 * g_r / h)), g_r - 1)
    c0 = min(int(math.floor(box.x0 * g_c / w)), g_c - 1)
    rows = max(1, round_half_up(box.height * g_r / h))
    cols = max(1, round_half_up(box.width * g_c / w))
    rows = min(rows, g_r - r0)
    cols = min(cols, g_c - c0)
    return TokenBox(r0=r0, c0=c0, rows=rows, cols=cols, source=box)


def crop_token_grid(grid: TokenGrid, tb: TokenBox) -> np.ndarray:
    """Exact sub-block copy (rows, cols, d_model); channel order preserved."""
    g_r, g_c = grid.grid
    if tb.r0 < 0 or tb.c0 < 0 or tb.r0 + tb.rows > g_r or tb.c0 + tb.cols > g_c:
        raise ValueError(f"token box {tb} exceeds grid {grid.grid}")
    if tb.rows < 1 or tb.cols < 1:
        raise ValueError(f"degenerate token box {tb}")
    return grid.tokens[tb.r0 : tb.r0 + tb.rows, tb.c0 : tb.c0 + tb.cols, :].copy()


def resize_token_grid(sub: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bicubic-resample a token sub-block to the target grid size.

    Every feature channel is an independent 2-D plane through the shared
    kernel, so the operation is linear in the token values.
    """
    s = np.asarray(sub, dtype=np.float64)
    if s.ndim != 3:
        raise ValueError(f"expected (rows, cols, d_model), got {s.shape}")
    g_r, g_c = target
    if (s.shape[0], s.shape[1]) == (g_r, g_c):
        return s.copy()
    out = np.empty((g_r, g_c, s.shape[2]), dtype=np.float64)
    for ch in range(s.shape[2]):
        out[:, :, ch] = core.bicubic_resample_2d(s[:, :, ch], g_r, g_c)
    return out


def assemble_crop_sequence(cls: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Stack [cls; tokens row-major] into the (1 + rows*cols, d_model) layout.

    Token (r, c) lands at sequence row 1 + r * cols + c, exactly where
    the encoder suffix expects it.
    """
    c = np.asarray(cls, dtype=np.float64)
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 3 or c.ndim != 1 or c.shape[0] != g.shape[2]:
        raise ValueError(f"dimension mismatch: cls {c.shape}, grid {g.shape}")
    return np.concatenate([c.reshape(1, -1), g.reshape(-1, g.shape[2])], axis=0)
