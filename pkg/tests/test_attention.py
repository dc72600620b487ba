"""Attention sampling tests: head averaging, top-k, probabilities, draws."""

from pathlib import Path

import numpy as np
import pytest

from abselect import core
from abselect.attention import (
    AttentionGrid,
    MultiHeadClsAttention,
    average_heads,
    patch_probabilities,
    sample_patches,
    select_top_k,
)
from abselect.seeding import make_rng

FIXTURES = Path(__file__).parent / "fixtures"


class TestAverageHeads:
    def test_single_head_identity(self):
        v = np.random.default_rng(0).random((1, 5, 5))
        out = average_heads(MultiHeadClsAttention(v))
        np.testing.assert_allclose(out.values, v[0])

    def test_zeros_and_ones(self):
        v = np.stack([np.zeros((3, 4)), np.ones((3, 4))])
        out = average_heads(MultiHeadClsAttention(v))
        np.testing.assert_allclose(out.values, 0.5)

    def test_fixture_matches_loop_oracle(self):
        v = core.read_tensor(FIXTURES / "attention_6head_14x14.abst").astype(np.float64)
        out = average_heads(MultiHeadClsAttention(v))
        expect = np.zeros((14, 14))
        for h in range(6):
            for r in range(14):
                for c in range(14):
                    expect[r, c] += v[h, r, c]
        expect /= 6
        np.testing.assert_allclose(out.values, expect, atol=1e-6)

    def test_permutation_invariant_in_head_order(self):
        rng = np.random.default_rng(1)
        v = rng.random((8, 6, 6))
        perm = rng.permutation(8)
        a = average_heads(MultiHeadClsAttention(v)).values
        b = average_heads(MultiHeadClsAttention(v[perm])).values
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            MultiHeadClsAttention(np.full((1, 2, 2), -0.1))


class TestSelectTopK:
    def test_tie_break_row_major(self):
        grid = AttentionGrid(np.ones((4, 4)))
        top = select_top_k(grid, 3)
        assert [(p.row, p.col) for p in top] == [(0, 0), (0, 1), (0, 2)]

    def test_single_max(self):
        v = np.zeros((8, 8))
        v[5, 7] = 3.0
        top = select_top_k(AttentionGrid(v), 1)
        assert [(p.row, p.col) for p in top] == [(5, 7)]

    def test_matches_full_sort_oracle(self):
        v = np.random.default_rng(2).random((14, 14))
        top = select_top_k(AttentionGrid(v), 20)
        flat_sorted = sorted(
            ((val, i) for i, val in enumerate(v.reshape(-1))),
            key=lambda t: (-t[0], t[1]),
        )
        expect = [(i // 14, i % 14) for _, i in flat_sorted[:20]]
        assert [(p.row, p.col) for p in top] == expect
        values = [p.value for p in top]
        assert values == sorted(values, reverse=True)

    def test_full_k_returns_permutation(self):
        v = np.random.default_rng(3).random((5, 6))
        top = select_top_k(AttentionGrid(v), 30)
        assert sorted((p.row, p.col) for p in top) == [(r, c) for r in range(5) for c in range(6)]

    def test_positive_scaling_preserves_order(self):
        v = np.random.default_rng(4).random((7, 7))
        a = select_top_k(AttentionGrid(v), 10)
        b = select_top_k(AttentionGrid(4.25 * v), 10)
        assert [(p.row, p.col) for p in a] == [(p.row, p.col) for p in b]

    def test_k_out_of_range(self):
        grid = AttentionGrid(np.ones((2, 2)))
        for k in (0, 5, -1):
            with pytest.raises(ValueError):
                select_top_k(grid, k)


class TestPatchProbabilities:
    def test_k1_probability_one(self):
        top = select_top_k(AttentionGrid(np.random.default_rng(5).random((3, 3))), 1)
        (p,) = patch_probabilities(top)
        assert p.probability == pytest.approx(1.0)

    def test_two_equal_values(self):
        v = np.zeros((2, 2))
        v[0, 0] = v[1, 1] = 2.0
        probs = patch_probabilities(select_top_k(AttentionGrid(v), 2))
        assert [p.probability for p in probs] == pytest.approx([0.5, 0.5])

    def test_k20_against_high_precision_softmax(self):
        rng = np.random.default_rng(6)
        v = rng.random((14, 14))
        top = select_top_k(AttentionGrid(v), 20)
        got = [p.probability for p in patch_probabilities(top)]
        import mpmath

        mpmath.mp.dps = 50
        vals = [mpmath.mpf(float(p.value)) for p in top]
        m = max(vals)
        es = [mpmath.exp(x - m) for x in vals]
        s = sum(es)
        expect = [float(e / s) for e in es]
        np.testing.assert_allclose(got, expect, atol=1e-7)
        assert sum(got) == pytest.approx(1.0, abs=1e-6)


class TestSamplePatches:
    def test_degenerate_distribution(self):
        v = np.zeros((4, 4))
        v[2, 1] = 1.0
        top = patch_probabilities(select_top_k(AttentionGrid(v), 1))
        out = sample_patches(top, 60, make_rng(0))
        assert len(out) == 60
        assert all((p.row, p.col) == (2, 1) for p in out)

    def test_deterministic_for_fixed_seed(self):
        v = np.random.default_rng(7).random((6, 6))
        top = patch_probabilities(select_top_k(AttentionGrid(v), 9))
        a = sample_patches(top, 200, make_rng(99))
        b = sample_patches(top, 200, make_rng(99))
        assert [(p.row, p.col) for p in a] == [(p.row, p.col) for p in b]

    def test_all_draws_from_topk(self):
        v = np.random.default_rng(8).random((10, 10))
        top = patch_probabilities(select_top_k(AttentionGrid(v), 7))
        allowed = {(p.row, p.col) for p in top}
        out = sample_patches(top, 500, make_rng(1))
        assert {(p.row, p.col) for p in out} <= allowed

    def test_empirical_frequencies(self):
        # statistical oracle at the acceptance thresholds
        from abselect.attention import PatchSample

        top = [
            PatchSample(0, 0, 3.0, 0.7),
            PatchSample(0, 1, 2.0, 0.2),
            PatchSample(0, 2, 1.0, 0.1),
        ]
        n = 100_000
        out = sample_patches(top, n, make_rng(4242))
        counts = np.zeros(3)
        for p in out:
            counts[p.col] += 1
        freqs = counts / n
        np.testing.assert_allclose(freqs, [0.7, 0.2, 0.1], atol=0.01)
        expected = np.array([0.7, 0.2, 0.1]) * n
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 13.815510557964274  # 99.9 % critical value, df=2
