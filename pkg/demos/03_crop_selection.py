"""
Crop boxes in raw space
=======================

Sampled anchor patches become pixel rectangles: the box is centered on
the patch, its side fractions are drawn from [alpha, beta], and it is
translated to fit the frame without changing size.  The overlay renderer
shows where the attention mass and the crops ended up.
"""

from pathlib import Path

import numpy as np

from abselect import (
    AttentionGrid,
    ImageTensor,
    make_rng,
    patch_center_pixels,
    propose_crop_box,
    render_overlay,
)

rng = make_rng(11)

# a synthetic photo with a bright "object" off center
h, w = 120, 160
y, x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
blob = 200 * np.exp(-(((y - 45.0) / 22) ** 2 + ((x - 105.0) / 28) ** 2))
pixels = np.clip(np.stack([blob * 0.9, blob, blob * 0.5], axis=2) + 30, 0, 255).astype(np.uint8)
image = ImageTensor(pixels=pixels)

# pretend attention found the blob: one hot cell plus faint neighbors
grid = np.full((6, 8), 0.01)
grid[2, 5] = 1.0
grid[2, 4] = grid[1, 5] = 0.3

boxes = []
for _ in range(8):
    center = patch_center_pixels((2, 5), (6, 8), (w, h))
    boxes.append(propose_crop_box(center, alpha=0.4, beta=0.8, image=(w, h), rng=rng))

for b in boxes[:4]:
    print(f"box at ({b.x0},{b.y0}) size {b.width}x{b.height} fractions ({b.fx:.2f},{b.fy:.2f})")
print(f"... all {len(boxes)} boxes lie inside the {w}x{h} frame")

out = Path(__file__).with_name("crop_selection_overlay.png")
out.write_bytes(render_overlay(image, AttentionGrid(grid), boxes))
print(f"wrote {out.name}")
