"""Soft-matching tests: catalog handling, weights, aggregation oracle."""

import math

import numpy as np
import pytest

from abselect import core
from abselect.backend import EmbeddingSet
from abselect.scoring import (
    DescriptionCatalog,
    aggregate_scores,
    baseline_clip_score,
    description_weights,
    load_catalog,
    save_catalog,
    similarity_row,
)
from abselect.seeding import make_rng

SIGMA_1_0 = 0.7310585786300049  # softmax([1, 0])[0] at 60-digit precision


def random_catalog(rng, k=3, max_m=4, dim=8, descriptions=False):
    rows = {}
    texts = {}
    for i in range(k):
        m = int(rng.integers(1, max_m + 1))
        rows[f"class_{i}"] = np.stack(
            [core.l2_normalize(rng.normal(size=dim)) for _ in range(m)]
        )
        texts[f"class_{i}"] = [f"description {j} of class {i}" for j in range(m)]
    return DescriptionCatalog.from_rows(rows, descriptions=texts if descriptions else None)


def unit_rows(rng, n, dim):
    return np.stack([core.l2_normalize(rng.normal(size=dim)) for _ in range(n)])


def brute_force_scores(rows, catalog, tau):
    """Triple-loop oracle for aggregate_scores, plain Python floats."""
    k = catalog.num_classes
    scores = [0.0] * k
    for i in range(rows.shape[0]):
        sims = [float(np.dot(rows[i], catalog.embeddings[t])) for t in range(catalog.total_rows)]
        m = max(sims)
        exps = [math.exp((s - m) / tau) for s in sims]
        z = sum(exps)
        for y in range(k):
            cls = catalog.classes[y]
            for j in range(cls.count):
                t = cls.offset + j
                scores[y] += (exps[t] / z) * sims[t]
    return scores


class TestCatalog:
    def test_rejects_non_unit_rows(self):
        with pytest.raises(ValueError, match="unit-norm"):
            DescriptionCatalog.from_rows({"a": np.ones((2, 4)), "b": np.ones((1, 4))})

    def test_rejects_duplicate_names(self):
        rng = make_rng(0)
        rows = unit_rows(rng, 2, 4)
        with pytest.raises(ValueError, match="unique"):
            DescriptionCatalog(
                classes=[
                    type(random_catalog(rng).classes[0])("x", 1, 0),
                    type(random_catalog(rng).classes[0])("x", 1, 1),
                ],
                embeddings=rows,
            )

    def test_save_load_round_trip(self, tmp_path):
        catalog = random_catalog(make_rng(1), descriptions=True)
        save_catalog(catalog, tmp_path / "catalog.json")
        assert (tmp_path / "catalog.abst").exists()
        back = load_catalog(tmp_path / "catalog.json")
        assert back.class_names == catalog.class_names
        assert [c.count for c in back.classes] == [c.count for c in catalog.classes]
        assert [c.descriptions for c in back.classes] == [c.descriptions for c in catalog.classes]
        np.testing.assert_allclose(back.embeddings, catalog.embeddings, atol=1e-7)

    def test_load_reverifies_norms(self, tmp_path):
        catalog = random_catalog(make_rng(2))
        save_catalog(catalog, tmp_path / "catalog.json")
        bad = catalog.embeddings.copy()
        bad[0] *= 2.0
        core.write_tensor(bad.astype(np.float32), tmp_path / "catalog.abst")
        with pytest.raises(ValueError, match="unit-norm"):
            load_catalog(tmp_path / "catalog.json")


class TestSimilarityRow:
    def test_matching_row_gives_one(self):
        catalog = random_catalog(make_rng(3))
        f = catalog.embeddings[2]
        row = similarity_row(f, catalog)
        assert row[2] == pytest.approx(1.0, abs=1e-6)
        assert np.all(row <= 1 + 1e-9) and np.all(row >= -1 - 1e-9)

    def test_orthogonal_gives_zero(self):
        rows = {"a": np.array([[1.0, 0.0, 0.0]]), "b": np.array([[0.0, 1.0, 0.0]])}
        catalog = DescriptionCatalog.from_rows(rows)
        row = similarity_row(np.array([0.0, 0.0, 1.0]), catalog)
        np.testing.assert_allclose(row, [0.0, 0.0], atol=1e-6)

    def test_matches_dot_loop(self):
        rng = make_rng(4)
        catalog = random_catalog(rng, k=4, max_m=5, dim=6)
        f = core.l2_normalize(rng.normal(size=6))
        row = similarity_row(f, catalog)
        expect = [sum(f[d] * catalog.embeddings[t, d] for d in range(6))
                  for t in range(catalog.total_rows)]
        np.testing.assert_allclose(row, expect, atol=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            similarity_row(np.zeros(5), random_catalog(make_rng(5), dim=8))


class TestDescriptionWeights:
    def test_uniform_on_equal_similarities(self):
        out = description_weights(np.full(10, 0.3), 0.01)
        np.testing.assert_allclose(out, 0.1, atol=1e-9)

    def test_concentrates_at_small_temperature(self):
        row = np.array([0.1, 0.5, 0.2, 0.05, 0.3, 0.15])
        out = description_weights(row, (row.max() - row.min()) / 20.0)
        assert out[1] > 0.99

    def test_high_precision_t6(self):
        rng = make_rng(6)
        row = rng.uniform(-1, 1, size=6)
        got = description_weights(row, 0.01)
        import mpmath

        mpmath.mp.dps = 60
        vals = [mpmath.mpf(float(v)) / mpmath.mpf(0.01) for v in row]
        m = max(vals)
        es = [mpmath.exp(v - m) for v in vals]
        s = sum(es)
        np.testing.assert_allclose(got, [float(e / s) for e in es], atol=1e-7)

    def test_rows_sum_to_one(self):
        rng = make_rng(7)
        for _ in range(100):
            row = rng.normal(size=int(rng.integers(1, 200)))
            assert abs(description_weights(row, float(rng.uniform(0.005, 2))).sum() - 1) <= 1e-6


class TestAggregateScores:
    def test_single_crop_two_classes_closed_form(self):
        catalog = DescriptionCatalog.from_rows(
            {"a": np.array([[1.0, 0.0]]), "b": np.array([[0.0, 1.0]])}
        )
        embs = EmbeddingSet(rows=np.array([[1.0, 0.0]]))
        table = aggregate_scores(embs, catalog, 1.0)
        np.testing.assert_allclose(
            table.class_scores, [SIGMA_1_0 * 1.0, (1 - SIGMA_1_0) * 0.0], atol=1e-9
        )
        assert table.predicted == 0
        assert table.margin == pytest.approx(SIGMA_1_0)

    def test_identical_crops_are_additive(self):
        rng = make_rng(8)
        catalog = random_catalog(rng, k=3, max_m=3, dim=5)
        f = unit_rows(rng, 1, 5)
        one = aggregate_scores(EmbeddingSet(rows=f), catalog, 0.05)
        many = aggregate_scores(EmbeddingSet(rows=np.repeat(f, 8, axis=0)), catalog, 0.05)
        np.testing.assert_allclose(many.class_scores, 8 * one.class_scores, atol=1e-9)
        assert many.predicted == one.predicted

    def test_matches_brute_force_oracle(self):
        rng = make_rng(9)
        catalog = random_catalog(rng, k=3, max_m=4, dim=7)
        rows = unit_rows(rng, 8, 7)
        table = aggregate_scores(EmbeddingSet(rows=rows), catalog, 0.02)
        expect = brute_force_scores(rows, catalog, 0.02)
        np.testing.assert_allclose(table.class_scores, expect, atol=1e-6)

    def test_weight_rows_sum_to_one(self):
        rng = make_rng(10)
        catalog = random_catalog(rng, k=4, max_m=6, dim=6)
        rows = unit_rows(rng, 10, 6)
        table = aggregate_scores(EmbeddingSet(rows=rows), catalog, 0.01)
        np.testing.assert_allclose(table.weights.sum(axis=1), 1.0, atol=1e-6)

    def test_permuting_descriptions_within_class_keeps_scores(self):
        rng = make_rng(11)
        dim = 6
        a = unit_rows(rng, 4, dim)
        b = unit_rows(rng, 3, dim)
        rows = unit_rows(rng, 5, dim)
        cat1 = DescriptionCatalog.from_rows({"a": a, "b": b})
        perm = rng.permutation(4)
        cat2 = DescriptionCatalog.from_rows({"a": a[perm], "b": b})
        t1 = aggregate_scores(EmbeddingSet(rows=rows), cat1, 0.03)
        t2 = aggregate_scores(EmbeddingSet(rows=rows), cat2, 0.03)
        np.testing.assert_allclose(t1.class_scores, t2.class_scores, atol=1e-6)

    def test_class_removal_renormalizes_cleanly(self):
        rng = make_rng(12)
        dim = 5
        blocks = {f"c{i}": unit_rows(rng, 2, dim) for i in range(4)}
        rows = unit_rows(rng, 6, dim)
        reduced = DescriptionCatalog.from_rows({k: v for k, v in blocks.items() if k != "c2"})
        table = aggregate_scores(EmbeddingSet(rows=rows), reduced, 0.02)
        assert np.all(np.isfinite(table.class_scores))
        np.testing.assert_allclose(table.weights.sum(axis=1), 1.0, atol=1e-6)

    def test_argmax_tie_breaks_to_lowest_index(self):
        catalog = DescriptionCatalog.from_rows(
            {"a": np.array([[1.0, 0.0]]), "b": np.array([[1.0, 0.0]])}
        )
        embs = EmbeddingSet(rows=np.array([[0.0, 1.0]]))
        table = aggregate_scores(embs, catalog, 1.0)
        assert table.class_scores[0] == table.class_scores[1]
        assert table.predicted == 0

    def test_preconditions(self):
        rng = make_rng(13)
        catalog = random_catalog(rng, k=2, dim=4)
        with pytest.raises(ValueError):
            aggregate_scores(EmbeddingSet(rows=np.zeros((0, 4))), catalog, 0.1)
        single = DescriptionCatalog.from_rows({"only": unit_rows(rng, 2, 4)})
        with pytest.raises(ValueError, match="K >= 2"):
            aggregate_scores(EmbeddingSet(rows=unit_rows(rng, 1, 4)), single, 0.1)


class TestBaseline:
    def test_exact_match(self):
        protos = np.eye(3)
        scores = baseline_clip_score(protos[0], protos)
        assert scores[0] == pytest.approx(1.0)
        assert int(np.argmax(scores)) == 0

    def test_tie_breaks_low_index(self):
        protos = np.eye(2)
        f = core.l2_normalize(protos[0] + protos[1])
        scores = baseline_clip_score(f, protos)
        assert scores[0] == pytest.approx(scores[1])
        assert int(np.argmax(scores)) == 0

    def test_matches_loop(self):
        rng = make_rng(14)
        protos = unit_rows(rng, 5, 9)
        f = core.l2_normalize(rng.normal(size=9))
        scores = baseline_clip_score(f, protos)
        expect = [float(np.dot(f, p)) for p in protos]
        np.testing.assert_allclose(scores, expect, atol=1e-12)
