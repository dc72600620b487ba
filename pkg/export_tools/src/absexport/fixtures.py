"""Cross-check fixture generation.

Produces the fixture bundle the engine's test suites consume: ABST
attention grids, a deterministic pattern image with a crop tensor
preprocessed by this tool's own resampler (independent of the engine's
kernel, same pinned convention), probe embeddings, and a synthetic
separable classification world (exported backends, dataset, catalog)
that a real engine run can score.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .abst import write_abst
from .catalog import build_catalog
from .graphs import export_attention_model, export_split_encoder
from .vit import VitConfig, random_vit

IMG_W, IMG_H = 48, 40


def write_png(pixels: np.ndarray, path: str | Path) -> None:
    """Minimal deterministic RGB PNG writer (filter 0, one IDAT chunk)."""
    p = np.asarray(pixels)
    if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {p.shape} {p.dtype}")
    h, w = p.shape[:2]

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

    raw = np.concatenate([np.zeros((h, 1), dtype=np.uint8), p.reshape(h, w * 3)], axis=1)
    data = (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw.tobytes(), 6))
            + chunk(b"IEND", b""))
    Path(path).write_bytes(data)


def resample_bicubic(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Catmull-Rom a=-0.5, half-pixel centers, edge clamp; direct evaluation."""

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


def preprocess(pixels: np.ndarray, size: int, mean, std) -> np.ndarray:
    """Full-image preprocessing matching the engine's pinned pipeline."""
    out = np.empty((3, size, size))
    for c in range(3):
        out[c] = resample_bicubic(pixels[:, :, c].astype(np.float64), size, size)
    out /= 255.0
    return (out - np.asarray(mean).reshape(3, 1, 1)) / np.asarray(std).reshape(3, 1, 1)


def make_pattern_image(w: int = 48, h: int = 40) -> np.ndarray:
    y, x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    r = (x * 255) // max(w - 1, 1)
    g = (y * 255) // max(h - 1, 1)
    b = ((x // 4 + y // 4) % 2) * 200 + 27
    return np.stack([r, g, b], axis=2).astype(np.uint8)


def _rings(rng: np.random.Generator) -> np.ndarray:
    cy = IMG_H / 2 + rng.uniform(-3, 3)
    cx = IMG_W / 2 + rng.uniform(-3, 3)
    y, x = np.meshgrid(np.arange(IMG_H), np.arange(IMG_W), indexing="ij")
    rad = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
    wave = 127.5 + 115 * np.sin(rad / 2.5)
    return np.stack([wave, wave * 0.3, wave * 0.9], axis=2)


def _diag(rng: np.random.Generator) -> np.ndarray:
    phase = rng.uniform(0, 12)
    y, x = np.meshgrid(np.arange(IMG_H), np.arange(IMG_W), indexing="ij")
    wave = (((x + y + phase) // 6) % 2) * 220 + 20
    return np.stack([wave * 0.3, wave, wave * 0.4], axis=2)


def _corner(rng: np.random.Generator) -> np.ndarray:
    oy, ox = rng.uniform(-4, 4, size=2)
    y, x = np.meshgrid(np.arange(IMG_H), np.arange(IMG_W), indexing="ij")
    bump = 230 * np.exp(-(((y - 8 - oy) / 9) ** 2 + ((x - 9 - ox) / 9) ** 2))
    return np.stack([bump * 0.4, bump * 0.5, bump], axis=2)


PATTERNS = {"corner": _corner, "diag": _diag, "rings": _rings}


def _fnv64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & ((1 << 64) - 1)
    return h


def render_class_image(name: str, variant: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(_fnv64(f"{name}#{variant}")))
    img = PATTERNS[name](rng) + rng.uniform(-8, 8, size=(IMG_H, IMG_W, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_fixtures(seed: int, out_dir: str | Path, fmt: str = "torchscript") -> dict:
    """Emit the full bundle; returns a manifest fragment listing everything."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    files: list[str] = []

    write_abst(rng.random((14, 14)).astype(np.float32), out / "attention_14x14.abst")
    write_abst(rng.random((6, 14, 14)).astype(np.float32), out / "attention_6head_14x14.abst")
    files += ["attention_14x14.abst", "attention_6head_14x14.abst"]

    pattern = make_pattern_image()
    write_png(pattern, out / "pattern.png")
    files.append("pattern.png")

    # exported world: embedding and attention backends are distinct models
    config = VitConfig(image_size=32, patch_size=8, d_model=32, heads=4,
                       layers=3, embed_dim=16)
    embedder = random_vit(config, seed)
    attention = random_vit(config, seed + 1)
    enc_info = export_split_encoder(embedder, config.layers - 1,
                                    out / "models" / "embedding", fmt=fmt,
                                    probe_seed=seed)
    att_info = export_attention_model(attention, out / "models" / "attention", fmt=fmt)
    files += [f"models/embedding/{f}" for f in enc_info["files"]]
    files += [f"models/attention/{f}" for f in att_info["files"]]

    # crop tensor cross-check fixture, preprocessed by this tool's resampler
    box = {"x0": 9, "y0": 7, "width": 24, "height": 20}
    crop = pattern[box["y0"]: box["y0"] + box["height"], box["x0"]: box["x0"] + box["width"], :]
    ref = np.empty((3, config.image_size, config.image_size))
    for c in range(3):
        ref[c] = resample_bicubic(crop[:, :, c].astype(np.float64),
                                  config.image_size, config.image_size)
    ref = (ref / 255.0 - np.asarray(config.mean).reshape(3, 1, 1)) / np.asarray(config.std).reshape(3, 1, 1)
    write_abst(ref.astype(np.float32), out / "crop_reference.abst")
    (out / "crop_box.json").write_text(json.dumps(box) + "\n")
    files += ["crop_reference.abst", "crop_box.json"]

    # separable dataset plus a catalog embedded by the exported encoder itself
    dataset = out / "dataset"
    for cls in PATTERNS:
        d = dataset / cls
        d.mkdir(parents=True, exist_ok=True)
        for i in range(4):
            write_png(render_class_image(cls, i), d / f"img_{i:02d}.png")
            files.append(f"dataset/{cls}/img_{i:02d}.png")

    class _VisualPrototypeEncoder:
        """Embeds each class as exported-encoder images of prototype renders."""

        name = f"visual-prototypes:{embedder.config.d_model}"

        def encode(self, texts: list[str]) -> np.ndarray:
            rows = []
            for text in texts:
                cls, variant = text.rsplit("#", 1)
                pixels = render_class_image(cls, int(variant))
                x = torch.from_numpy(
                    preprocess(pixels, config.image_size, config.mean, config.std)
                ).float().unsqueeze(0)
                with torch.no_grad():
                    rows.append(embedder(x)[0].numpy().astype(np.float64))
            return np.stack(rows)

    prototype_texts = {cls: [f"{cls}#1000", f"{cls}#1001"] for cls in PATTERNS}
    stats = build_catalog(prototype_texts, _VisualPrototypeEncoder(), out)
    files += ["catalog.json", "catalog.abst"]

    return {"seed": seed, "files": sorted(files), "catalog": stats}
