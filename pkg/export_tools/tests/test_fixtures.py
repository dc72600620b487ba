"""Fixture bundle tests."""

import json
import zlib

import numpy as np
import pytest

from absexport.abst import read_abst, write_abst
from absexport.fixtures import (
    generate_fixtures,
    make_pattern_image,
    render_class_image,
    resample_bicubic,
    write_png,
)


def test_abst_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 5, 2)).astype(np.float32)
    write_abst(arr, tmp_path / "t.abst")
    back = read_abst(tmp_path / "t.abst")
    assert back.tobytes() == arr.tobytes()


def test_png_writer_is_valid_and_deterministic(tmp_path):
    pixels = make_pattern_image(10, 8)
    write_png(pixels, tmp_path / "a.png")
    write_png(pixels, tmp_path / "b.png")
    a = (tmp_path / "a.png").read_bytes()
    assert a == (tmp_path / "b.png").read_bytes()
    assert a[:8] == b"\x89PNG\r\n\x1a\n"
    # IDAT payload inflates back to the filtered scanlines
    idat_start = a.index(b"IDAT") + 4
    idat_len = int.from_bytes(a[idat_start - 8 : idat_start - 4], "big")
    raw = zlib.decompress(a[idat_start : idat_start + idat_len])
    assert len(raw) == 8 * (1 + 10 * 3)


def test_resampler_preserves_constants_and_identity():
    plane = np.full((5, 4), 2.5)
    out = resample_bicubic(plane, 9, 7)
    np.testing.assert_allclose(out, 2.5, atol=1e-9)
    plane = np.random.default_rng(1).normal(size=(6, 6))
    np.testing.assert_allclose(resample_bicubic(plane, 6, 6), plane, atol=1e-12)


def test_class_images_deterministic_and_distinct():
    a = render_class_image("rings", 0)
    b = render_class_image("rings", 0)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(render_class_image("rings", 1), a)
    assert not np.array_equal(render_class_image("diag", 0), a)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    info = generate_fixtures(7, out)
    return out, info


def test_bundle_contents(bundle):
    out, info = bundle
    for name in info["files"]:
        assert (out / name).exists(), name
    assert info["catalog"]["classes"] == 3
    assert info["catalog"]["total_rows"] == 6
    attn = read_abst(out / "attention_14x14.abst")
    assert attn.shape == (14, 14) and attn.dtype == np.float32
    crop = read_abst(out / "crop_reference.abst")
    assert crop.shape == (3, 32, 32)
    box = json.loads((out / "crop_box.json").read_text())
    assert set(box) == {"x0", "y0", "width", "height"}


def test_bundle_dataset_is_twelve_images(bundle):
    out, _ = bundle
    images = sorted((out / "dataset").rglob("*.png"))
    assert len(images) == 12
    classes = {p.parent.name for p in images}
    assert classes == {"corner", "diag", "rings"}


def test_bundle_catalog_rows_match_exported_encoder(bundle):
    # catalog rows are the exported encoder's own embeddings of prototype
    # renders, so their norms are exactly 1 up to f32 rounding
    out, _ = bundle
    rows = read_abst(out / "catalog.abst").astype(np.float64)
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-5)
