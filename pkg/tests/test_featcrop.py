"""Token-grid cropping, resampling and sequence assembly tests."""

import numpy as np
import pytest

from abselect import core
from abselect.featcrop import (
    TokenBox,
    TokenGrid,
    assemble_crop_sequence,
    crop_token_grid,
    map_box_to_tokens,
    resize_token_grid,
)
from abselect.rawcrop import CropBox


def _grid(rows=4, cols=4, d=8, seed=0):
    rng = np.random.default_rng(seed)
    return TokenGrid(tokens=rng.normal(size=(rows, cols, d)), cls=rng.normal(size=d))


class TestMapBoxToTokens:
    def test_exact_halving(self):
        tb = map_box_to_tokens(CropBox(0, 0, 112, 112), (224, 224), (14, 14))
        assert (tb.r0, tb.c0, tb.rows, tb.cols) == (0, 0, 7, 7)

    def test_full_image_box(self):
        tb = map_box_to_tokens(CropBox(0, 0, 224, 224), (224, 224), (14, 14))
        assert (tb.r0, tb.c0, tb.rows, tb.cols) == (0, 0, 14, 14)

    def test_stated_formula_case(self):
        tb = map_box_to_tokens(CropBox(16, 32, 96, 64), (224, 224), (14, 14))
        assert (tb.r0, tb.c0, tb.rows, tb.cols) == (2, 1, 4, 6)

    def test_tiny_box_selects_one_token(self):
        tb = map_box_to_tokens(CropBox(100, 100, 2, 3), (224, 224), (14, 14))
        assert tb.rows == 1 and tb.cols == 1

    def test_always_within_grid(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            w = int(rng.integers(8, 500))
            h = int(rng.integers(8, 500))
            bw = int(rng.integers(1, w + 1))
            bh = int(rng.integers(1, h + 1))
            x0 = int(rng.integers(0, w - bw + 1))
            y0 = int(rng.integers(0, h - bh + 1))
            g = (int(rng.integers(1, 20)), int(rng.integers(1, 20)))
            tb = map_box_to_tokens(CropBox(x0, y0, bw, bh), (w, h), g)
            assert 0 <= tb.r0 < g[0] and 0 <= tb.c0 < g[1]
            assert tb.rows >= 1 and tb.cols >= 1
            assert tb.r0 + tb.rows <= g[0] and tb.c0 + tb.cols <= g[1]


class TestCropTokenGrid:
    def test_full_grid_identity(self):
        g = _grid()
        out = crop_token_grid(g, TokenBox(0, 0, 4, 4))
        np.testing.assert_array_equal(out, g.tokens)

    def test_single_token(self):
        g = _grid()
        out = crop_token_grid(g, TokenBox(2, 3, 1, 1))
        np.testing.assert_array_equal(out[0, 0], g.tokens[2, 3])

    def test_matches_index_loop_oracle(self):
        g = _grid(rows=7, cols=5, d=6, seed=2)
        tb = TokenBox(1, 2, 4, 3)
        out = crop_token_grid(g, tb)
        for r in range(tb.rows):
            for c in range(tb.cols):
                for ch in range(6):
                    assert out[r, c, ch] == g.tokens[tb.r0 + r, tb.c0 + c, ch]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            crop_token_grid(_grid(), TokenBox(2, 2, 3, 1))


class TestResizeTokenGrid:
    def test_identity(self):
        sub = np.random.default_rng(3).normal(size=(4, 4, 8))
        np.testing.assert_allclose(resize_token_grid(sub, (4, 4)), sub, atol=1e-6)

    def test_constant(self):
        sub = np.full((2, 3, 5), 1.75)
        out = resize_token_grid(sub, (6, 6))
        np.testing.assert_allclose(out, 1.75, atol=1e-6)

    def test_matches_per_channel_scalar_oracle(self):
        sub = np.random.default_rng(4).normal(size=(7, 7, 8))
        out = resize_token_grid(sub, (14, 14))
        for ch in range(8):
            np.testing.assert_allclose(
                out[:, :, ch], core.bicubic_resample_2d(sub[:, :, ch], 14, 14), atol=1e-5
            )

    def test_linear_in_tokens(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 5, 4))
        y = rng.normal(size=(3, 5, 4))
        lhs = resize_token_grid(2.5 * x - 1.25 * y, (8, 9))
        rhs = 2.5 * resize_token_grid(x, (8, 9)) - 1.25 * resize_token_grid(y, (8, 9))
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


class TestAssembleSequence:
    def test_197_row_layout(self):
        cls = np.random.default_rng(6).normal(size=768)
        grid = np.random.default_rng(7).normal(size=(14, 14, 768))
        seq = assemble_crop_sequence(cls, grid)
        assert seq.shape == (197, 768)
        np.testing.assert_array_equal(seq[0], cls)

    def test_one_by_one_grid(self):
        cls = np.arange(4.0)
        grid = np.arange(4.0).reshape(1, 1, 4) + 10
        seq = assemble_crop_sequence(cls, grid)
        assert seq.shape == (2, 4)
        np.testing.assert_array_equal(seq[1], grid[0, 0])

    def test_row_major_flatten_order(self):
        g_r, g_c, d = 3, 5, 2
        grid = np.zeros((g_r, g_c, d))
        for r in range(g_r):
            for c in range(g_c):
                grid[r, c] = [r, c]
        seq = assemble_crop_sequence(np.zeros(d), grid)
        for r in range(g_r):
            for c in range(g_c):
                np.testing.assert_array_equal(seq[1 + r * g_c + c], [r, c])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            assemble_crop_sequence(np.zeros(3), np.zeros((2, 2, 4)))


def test_full_round_trip_preserves_sequence():
    g = _grid(seed=8)
    tb = map_box_to_tokens(CropBox(0, 0, 64, 64), (64, 64), g.grid)
    resized = resize_token_grid(crop_token_grid(g, tb), g.grid)
    seq = assemble_crop_sequence(g.cls, resized)
    direct = assemble_crop_sequence(g.cls, g.tokens)
    np.testing.assert_allclose(seq, direct, atol=1e-6)
