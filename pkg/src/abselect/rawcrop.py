"""Pixel-space crop selection and encoder preprocessing.

Sampled anchor patches are mapped to pixel centers on the original
image; a crop rectangle with independently drawn width and height
fractions is centered there and translated the minimum distance needed
to fit inside the frame.  Crops are then bicubic-resampled to the
encoder's input size and normalized.

All geometric rounding uses round-half-up (floor(x + 0.5)), pinned so
identical seeds give identical boxes everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import core


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class ConfigError(ValueError):
    """Raised for invalid run parameters (crop bounds, temperatures, counts)."""


@dataclass(frozen=True)
class ImageTensor:
    """A decoded 8-bit RGB image; pixels are (height, width, 3) uint8."""

    pixels: np.ndarray
    source: str = ""

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 pixels, got {p.shape} {p.dtype}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class CropBox:
    """An axis-aligned pixel rectangle, fully inside its image.

    fx and fy are the size fractions the box was drawn with; anchor is
    the (row, col) of the attention patch that produced it.
    """

    x0: int
    y0: int
    width: int
    height: int
    anchor: tuple[int, int] = (-1, -1)
    fx: float = 1.0
    fy: float = 1.0

    def validate_against(self, image_w: int, image_h: int) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"degenerate box {self}")
        if self.x0 < 0 or self.y0 < 0 or self.x0 + self.width > image_w or self.y0 + self.height > image_h:
            raise ValueError(f"box {self} exceeds image {image_w}x{image_h}")


@dataclass(frozen=True)
class EncoderInputSpec:
    """Preprocessing constants for one encoder.

    input_size = patch_size * grid side; mean/std are per-channel in
    [0, 1] intensity units.
    """

    input_size: int
    patch_size: int
    grid: tuple[int, int]
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        rows, cols = self.grid
        if self.input_size != self.patch_size * rows or self.input_size != self.patch_size * cols:
            raise ValueError(
                f"input_size {self.input_size} != patch_size {self.patch_size} x grid {self.grid}"
            )


def patch_center_pixels(
    patch: tuple[int, int], grid: tuple[int, int], image: tuple[int, int]
) -> tuple[int, int]:
    """Center pixel (cx, cy) of a grid patch mapped onto a W x H image."""
    row, col = patch
    rows, cols = grid
    w, h = image
    if not (0 <= row < rows and 0 <= col < cols):
        raise ValueError(f"patch {patch} outside grid {grid}")
    cx = round_half_up((col + 0.5) * w / cols)
    cy = round_half_up((row + 0.5) * h / rows)
    return cx, cy


def propose_crop_box(
    center: tuple[int, int],
    alpha: float,
    beta: float,
    image: tuple[int, int],
    rng: np.random.Generator,
    anchor: tuple[int, int] = (-1, -1),
) -> CropBox:
    """Draw a crop rectangle around a center point.

    Width and height fractions are independent uniform draws from
    [alpha, beta] (fx first, then fy, consuming two rng doubles).  The
    box is centered at the given point, then translated the minimum
    distance needed to lie fully inside the image; its size never
    changes during clamping.
    """
    if not (0 < alpha <= beta <= 1):
        raise ConfigError(f"require 0 < alpha <= beta <= 1, got alpha={alpha} beta={beta}")
    w, h = image
    cx, cy = center
    if not (0 <= cx <= w and 0 <= cy <= h):
        raise ValueError(f"center {center} outside image {image}")
    fx = alpha + (beta - alpha) * rng.random()
    fy = alpha + (beta - alpha) * rng.random()
    bw = min(max(1, round_half_up(fx * w)), w)
    bh = min(max(1, round_half_up(fy * h)), h)
    x0 = min(max(0, round_half_up(cx - bw / 2)), w - bw)
    y0 = min(max(0, round_half_up(cy - bh / 2)), h - bh)
    return CropBox(x0=x0, y0=y0, width=bw, height=bh, anchor=anchor, fx=fx, fy=fy)


def crop_and_preprocess(
    image: ImageTensor, box: CropBox, spec: EncoderInputSpec
) -> np.ndarray:
    """Extract a box, resample it to the encoder input size, normalize.

    Returns float64 (3, S, S): pixels scaled to [0, 1] then per-channel
    (v - mean) / std.  Resampling uses the pinned bicubic kernel; an
    identity-size box skips resampling entirely.
    """
    box.validate_against(image.width, image.height)
    s = spec.input_size
    patch = image.pixels[box.y0 : box.y0 + box.height, box.x0 : box.x0 + box.width, :]
    out = np.empty((3, s, s), dtype=np.float64)
    for c in range(3):
        out[c] = core.bicubic_resample_2d(patch[:, :, c].astype(np.float64), s, s)
    out /= 255.0
    mean = np.asarray(spec.mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(spec.std, dtype=np.float64).reshape(3, 1, 1)
    out = (out - mean) / std
    if not np.all(np.isfinite(out)):
        raise ValueError("preprocessing produced non-finite values")
    return out


def full_image_box(image: ImageTensor) -> CropBox:
    """The identity box covering the whole frame."""
    return CropBox(x0=0, y0=0, width=image.width, height=image.height)
