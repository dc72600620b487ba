#!/usr/bin/env python3
"""Regenerate the frozen test fixtures under tests/fixtures/.

Everything here is deterministic; reruns must be byte-identical.  The
crop reference tensor is produced by a resampler written independently
of the engine kernel (direct per-pixel evaluation) so the two bound each
other's drift.  The golden world is a reference-encoder stack plus a
synthetic three-class dataset built to be separable by construction; the
script refuses to freeze goldens unless the stack classifies it 12/12.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

import abselect as ab
from abselect.pipeline import Backends, RunConfig, canonical_json, evaluate_dataset, run_image
from abselect.backend import save_model_spec

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"


def independent_bicubic(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Direct evaluation of the pinned kernel; shares no code with the engine."""

    def k(t: float) -> float:
        a, t = -0.5, abs(t)
        if t <= 1.0:
            return (a + 2) * t**3 - (a + 3) * t**2 + 1
        if t < 2.0:
            return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
        return 0.0

    h, w = plane.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = (i + 0.5) * h / out_h - 0.5
        by = math.floor(sy)
        for j in range(out_w):
            sx = (j + 0.5) * w / out_w - 0.5
            bx = math.floor(sx)
            acc = 0.0
            for m in range(-1, 3):
                yy = min(max(by + m, 0), h - 1)
                for n in range(-1, 3):
                    xx = min(max(bx + n, 0), w - 1)
                    acc += k(sy - (by + m)) * k(sx - (bx + n)) * plane[yy, xx]
            out[i, j] = acc
    return out


def make_pattern_image(w: int = 48, h: int = 40) -> np.ndarray:
    """Deterministic RGB test card: gradients plus a checker field."""
    y, x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    r = (x * 255) // max(w - 1, 1)
    g = (y * 255) // max(h - 1, 1)
    b = ((x // 4 + y // 4) % 2) * 200 + 27
    return np.stack([r, g, b], axis=2).astype(np.uint8)


# synthetic class patterns --------------------------------------------------

def _stripes(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    y = np.arange(h)[:, None] * np.ones((1, w))
    phase = rng.uniform(0, 2 * np.pi)
    wave = 127.5 + 110.0 * np.sin(2 * np.pi * y / 8.0 + phase)
    img = np.stack([wave, 0.25 * wave, 0.25 * wave], axis=2)
    return img


def _checker(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    oy, ox = rng.integers(0, 8, size=2)
    y, x = np.meshgrid(np.arange(h) + oy, np.arange(w) + ox, indexing="ij")
    cells = (((y // 8) + (x // 8)) % 2).astype(np.float64) * 220 + 15
    img = np.stack([0.25 * cells, 0.25 * cells, cells], axis=2)
    return img


def _blobs(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    cy = h / 2 + rng.uniform(-4, 4)
    cx = w / 2 + rng.uniform(-4, 4)
    y, x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    bump = 235.0 * np.exp(-(((y - cy) / (h / 4)) ** 2 + ((x - cx) / (w / 4)) ** 2))
    img = np.stack([0.2 * bump, bump, 0.2 * bump], axis=2)
    return img


PATTERNS = {"blobs": _blobs, "checker": _checker, "stripes": _stripes}
IMG_W, IMG_H = 48, 40


def render_class_image(class_name: str, variant_seed: int) -> np.ndarray:
    rng = ab.make_rng(ab.mix64(ab.stable_hash(class_name), variant_seed))
    img = PATTERNS[class_name](rng, IMG_W, IMG_H)
    img = img + rng.uniform(-10, 10, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def preprocess_full(pixels: np.ndarray, spec) -> np.ndarray:
    image = ab.ImageTensor(pixels=pixels)
    return ab.crop_and_preprocess(image, ab.full_image_box(image), spec.input_spec())


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)

    rng = ab.make_rng(2024)
    attn = rng.random((14, 14)).astype(np.float32)
    ab.write_tensor(attn, FIXTURES / "attention_14x14.abst")
    attn6 = rng.random((6, 14, 14)).astype(np.float32)
    ab.write_tensor(attn6, FIXTURES / "attention_6head_14x14.abst")

    pattern = make_pattern_image()
    ab.write_png(pattern, FIXTURES / "pattern.png")

    # crop cross-check: box upscales to the encoder input in both axes
    enc = ab.make_reference_encoder(42)
    spec = enc.spec
    box = {"x0": 9, "y0": 7, "width": 24, "height": 20}
    s = spec.input_size
    crop = pattern[box["y0"] : box["y0"] + box["height"], box["x0"] : box["x0"] + box["width"], :]
    ref = np.empty((3, s, s))
    for c in range(3):
        ref[c] = independent_bicubic(crop[:, :, c].astype(np.float64), s, s)
    ref = ref / 255.0
    ref = (ref - np.asarray(spec.mean).reshape(3, 1, 1)) / np.asarray(spec.std).reshape(3, 1, 1)
    ab.write_tensor(ref.astype(np.float32), FIXTURES / "crop_reference.abst")
    (FIXTURES / "crop_box.json").write_text(json.dumps(box) + "\n")

    emb = enc.encode_image(preprocess_full(pattern, spec))
    ab.write_tensor(emb.astype(np.float32), FIXTURES / "golden_embedding.abst")

    # golden world -----------------------------------------------------------
    world = FIXTURES / "world"
    models = world / "models"
    for sub, seed in (("embedding", 42), ("attention", 7)):
        d = models / sub
        d.mkdir(parents=True, exist_ok=True)
        save_model_spec(spec, d / "model_spec.json")
        (d / "reference.json").write_text(json.dumps({"seed": seed, "heads": 4}) + "\n")

    dataset = world / "dataset"
    for cls in PATTERNS:
        d = dataset / cls
        d.mkdir(parents=True, exist_ok=True)
        for i in range(4):
            ab.write_png(render_class_image(cls, i), d / f"img_{i:02d}.png")

    proto_rows = {}
    for cls in sorted(PATTERNS):
        rows = []
        for j in (1000, 1001):
            pixels = render_class_image(cls, j)
            rows.append(enc.encode_image(preprocess_full(pixels, spec)))
        proto_rows[cls] = np.stack(rows)
    catalog = ab.DescriptionCatalog.from_rows(
        proto_rows,
        descriptions={c: [f"{c} prototype a", f"{c} prototype b"] for c in proto_rows},
        source_model="reference-42",
    )
    ab.save_catalog(catalog, world / "catalog.json")
    # goldens must match what consumers load, i.e. the f32-quantized rows
    catalog = ab.load_catalog(world / "catalog.json")

    backends = Backends(
        embedding=ab.load_backend(models / "embedding"),
        attention=ab.load_backend(models / "attention"),
    )
    config = RunConfig(
        alpha=0.5, beta=0.9, k=5, n_crops=6, tau=0.01, seed=42,
        branches="both",
        paths={"models": "world/models", "catalog": "world/catalog.json", "dataset": "world/dataset"},
    )
    report = evaluate_dataset(dataset, config, backends, catalog)
    if report.top1_accuracy != 1.0:
        print("refusing to freeze goldens: accuracy is "
              f"{report.top1_accuracy:.3f}, per-class {report.per_class}", file=sys.stderr)
        return 1
    (world / "golden_eval.json").write_text(canonical_json(report.to_dict(include_timing=False)) + "\n")

    first = sorted((dataset / "blobs").glob("*.png"))[0]
    image = ab.load_image(first)
    result = run_image(image, config, backends, catalog, image_id="blobs/img_00.png")
    (world / "golden_image_result.json").write_text(
        canonical_json(result.to_dict(include_timing=False)) + "\n"
    )

    # overlay golden: fixture attention + two fixed boxes on the pattern card
    from abselect.attention import AttentionGrid
    from abselect.pipeline import render_overlay
    from abselect.rawcrop import CropBox

    overlay = render_overlay(
        ab.ImageTensor(pixels=pattern),
        AttentionGrid(attn.astype(np.float64)),
        [CropBox(4, 3, 20, 16, anchor=(2, 2)), CropBox(20, 15, 24, 20, anchor=(8, 9))],
    )
    (FIXTURES / "overlay_golden.png").write_bytes(overlay)

    print(f"fixtures written under {FIXTURES}")
    print(f"golden eval: {report.correct}/{report.image_count} correct")
    return 0


if __name__ == "__main__":
    sys.exit(main())
