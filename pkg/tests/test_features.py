import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credrank.errors import ParseError, ZeroMentionError
from credrank.features import (CompanyFeatures, FeatureConfig, aggregate_company, construct_image,
                               data1_norm, dump_features, export_pgm, featurize_companies,
                               keyword_counts, load_features, pgm_bytes, read_pgm, rescale_unit)
from credrank.lda import GibbsConfig, fit_lda, keyword_grid
from credrank.lexicon import BagOfWords

GOLDEN = Path(__file__).parent / "golden"


def fixture_features():
    data3 = np.array([[(r * 10 + j) % 7 for j in range(10)] for r in range(3)])
    return CompanyFeatures("fx", 4, np.array([0.5, 0.25, 0.25]), data3)


def stub_model(dominant, K):
    """A fitted model whose documents have the given dominant topics."""
    bags = [BagOfWords({"t": 1}) for _ in dominant]
    model = fit_lda(bags, GibbsConfig(K=K, iterations=1))
    model.n_dk[:] = 0
    model.n_dk[np.arange(len(dominant)), dominant] = 1
    return model


class TestAggregate:
    def test_histogram_example(self):
        # 1000 articles: 20 in A, 100 in B, 150 in C, the rest spread over D
        dominant = np.array([0] * 20 + [1] * 100 + [2] * 150 + [3] * 730)
        model = stub_model(dominant, 4)
        keywords = [["kw"] * 10 for _ in range(4)]
        bags = [BagOfWords({}) for _ in dominant]
        f = aggregate_company("c", range(1000), model, keywords, bags)
        assert f.data1 == 1000
        np.testing.assert_allclose(f.data2[:3], [0.02, 0.10, 0.15])

    def test_single_article_no_keywords(self):
        model = stub_model(np.array([2]), 3)
        f = aggregate_company("c", [0], model, [[f"k{i}{j}" for j in range(10)] for i in range(3)],
                              [BagOfWords({"other": 4})])
        assert not f.data3.any()
        assert f.data2.tolist() == [0.0, 0.0, 1.0]

    def test_zero_mentions(self):
        with pytest.raises(ZeroMentionError):
            aggregate_company("c", [], stub_model(np.array([0]), 2), [["a"] * 10] * 2, [BagOfWords({})])

    def test_keyword_counts_sum_over_articles(self):
        bags = [BagOfWords({"a": 3, "b": 1}), BagOfWords({"a": 10}), BagOfWords({"c": 2})]
        kws = [["a", "b"], ["c", "a"]]
        counts = keyword_counts(bags, kws)
        assert counts.shape == (3, 2, 2)
        assert counts.sum(axis=0).tolist() == [[13, 1], [2, 13]]

    def test_planted_keyword_count(self, small_world):
        # recount one keyword for one company directly from the article text
        from credrank.pipeline import ingest
        from credrank.lexicon import Lexicon, extract_bag
        lex = Lexicon.from_terms(small_world.lexicon_terms)
        ing = ingest(lex, small_world.articles, small_world.companies)
        model = fit_lda(ing.bags, GibbsConfig(K=5, iterations=20))
        keywords = keyword_grid(model)
        feats = {f.company_id: f for f in featurize_companies(ing.mentions, model, keywords, ing.bags)}
        cid = small_world.companies[0].id
        term = keywords[0][0]
        mine = [a for a in small_world.articles if small_world.article_company.get(a.id) == cid]
        expected = sum(extract_bag(a.title + "\n" + a.body, lex).counts.get(term, 0) for a in mine)
        assert feats[cid].data3[0, 0] == expected
        assert feats[cid].data1 == len(mine)


class TestImage:
    def test_zero_keywords(self):
        f = CompanyFeatures("c", 3, np.array([1.0, 0.0]), np.zeros((2, 10), dtype=int))
        img = construct_image(f, FeatureConfig())
        assert img.shape == (2, 11)
        assert (img[:, 1:] == 0).all()

    def test_tanh_one(self):
        data3 = np.zeros((2, 10), dtype=int)
        data3[1, 4] = 7
        img = construct_image(CompanyFeatures("c", 7, np.array([0.5, 0.5]), data3), FeatureConfig(c=1.0))
        assert img[1, 5] == pytest.approx(0.76159, abs=1e-5)

    def test_doubling_articles(self):
        f = fixture_features()
        doubled = CompanyFeatures("fx", 2 * f.data1, f.data2.copy(), 2 * f.data3)
        for c in (1.0, 0.3, 2.7):
            assert construct_image(f, FeatureConfig(c)).tobytes() == construct_image(doubled, FeatureConfig(c)).tobytes()

    def test_monotone_in_keyword_count(self):
        f = fixture_features()
        bumped = f.data3.copy()
        bumped[2, 3] += 1
        a = construct_image(f, FeatureConfig())
        b = construct_image(CompanyFeatures("fx", f.data1, f.data2, bumped), FeatureConfig())
        assert b[2, 4] > a[2, 4]
        assert np.array_equal(np.delete(a.ravel(), 2 * 11 + 4), np.delete(b.ravel(), 2 * 11 + 4))

    def test_saturation_stays_below_one(self):
        data3 = np.full((1, 10), 40)
        img = construct_image(CompanyFeatures("c", 1, np.array([1.0]), data3), FeatureConfig(c=1.0))
        assert (img[:, 1:] < 1).all()
        assert list(pgm_bytes(img)[-10:]) == [254] * 10

    def test_bad_c(self):
        with pytest.raises(ValueError):
            FeatureConfig(c=0.0)


@st.composite
def company_features(draw):
    K = draw(st.integers(1, 15))
    data1 = draw(st.integers(1, 500))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    data2 = np.bincount(rng.integers(0, K, size=data1), minlength=K) / data1
    data3 = rng.integers(0, draw(st.sampled_from([2, 5, 50])) * data1 + 1, size=(K, 10))
    return CompanyFeatures("c", data1, data2, data3)


@settings(max_examples=200, deadline=None)
@given(company_features(), st.floats(0.01, 5.0), st.integers(2, 9))
def test_image_invariants(f, c, m):
    img = construct_image(f, FeatureConfig(c))
    assert ((img >= 0) & (img <= 1)).all()
    assert (img[:, 1:] < 1).all()
    assert abs(img[:, 0].sum() - 1.0) <= 1e-9
    rep = CompanyFeatures("c", m * f.data1, f.data2, m * f.data3)
    assert construct_image(rep, FeatureConfig(c)).tobytes() == img.tobytes()


class TestPgm:
    def test_golden_fixture(self, tmp_path):
        img = construct_image(fixture_features(), FeatureConfig(c=1.0))
        export_pgm(img, tmp_path / "fx.pgm")
        assert (tmp_path / "fx.pgm").read_bytes() == (GOLDEN / "fixture_3x11.pgm").read_bytes()

    def test_golden_zero(self, tmp_path):
        export_pgm(np.zeros((15, 11)), tmp_path / "z.pgm")
        assert (tmp_path / "z.pgm").read_bytes() == (GOLDEN / "zeros_15x11.pgm").read_bytes()

    def test_byte_rules(self):
        data = pgm_bytes(np.array([[1.0, math.tanh(1.0), 0.0, 1.5, -0.2]]))
        assert data[:11] == b"P5\n5 1\n255\n"
        assert list(data[11:]) == [255, 194, 0, 255, 0]

    def test_read_back(self, tmp_path):
        img = np.linspace(0, 1, 33).reshape(3, 11)
        export_pgm(img, tmp_path / "a.pgm")
        back = read_pgm(tmp_path / "a.pgm")
        assert back.shape == (3, 11)
        assert np.array_equal(back, np.floor(img * 255).astype(np.uint8))

    def test_read_rejects_other_formats(self, tmp_path):
        (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ParseError):
            read_pgm(tmp_path / "p2.pgm")

    def test_rescale(self):
        assert rescale_unit(np.array([[2.0, 4.0], [3.0, 2.0]])).tolist() == [[0.0, 1.0], [0.5, 0.0]]
        assert not rescale_unit(np.full((2, 2), 7.0)).any()


def test_data1_norm():
    assert data1_norm(9, 99) == pytest.approx(math.log(10) / math.log(100))
    assert data1_norm(500, 99) == 1.0
    assert data1_norm(0, 5) == 0.0
    with pytest.raises(ValueError):
        data1_norm(1, 0)


def test_features_round_trip():
    f = fixture_features()
    g = CompanyFeatures("g", 1, np.array([1 / 3, 2 / 3, 0.0]), np.ones((3, 10), dtype=int))
    back = load_features(dump_features([f, g]), K=3)
    for a, b in zip([f, g], back):
        assert a.company_id == b.company_id and a.data1 == b.data1
        assert a.data2.tobytes() == b.data2.tobytes()
        assert np.array_equal(a.data3, b.data3)
    with pytest.raises(ParseError):
        load_features("x,1,0.5\n", K=3)
