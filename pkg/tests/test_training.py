import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from credrank.errors import DegenerateNormalizationError, ParseError, UnknownCompanyError
from credrank.network import PARAM_NAMES, NetworkHyper, init_params
from credrank.training import (FeatureTargetMismatch, Ranking, TrainConfig, fit_scorer, holdout_split,
                               load_ranking, load_ratings, minmax, predict_all, score_all, train)

HYPER = NetworkHyper(image_rows=3, image_cols=11, conv_filters=2, widths=(6, 5, 4, 4, 4, 3))


def toy_set(n, seed=0):
    """Companies whose target is the mean of the image, a learnable signal."""
    rng = np.random.default_rng(seed)
    feats, targets = {}, {}
    for i in range(n):
        img = rng.random((3, 11))
        feats[f"c{i:03d}"] = (img, float(rng.random()))
        targets[f"c{i:03d}"] = float(np.clip((img.mean() - 0.4) * 5, 0, 1))
    return feats, targets


class TestRatings:
    def test_mean_then_minmax(self):
        text = "company_id,rater_id,raw_score\nA,r1,2\nA,r2,4\nB,r1,5\nB,r3,5\n"
        rs = load_ratings(io.StringIO(text))
        assert rs.ratings == {"A": 0.0, "B": 1.0}
        assert rs.provenance == {"A": 2, "B": 2}

    def test_degenerate(self):
        with pytest.raises(DegenerateNormalizationError):
            load_ratings(io.StringIO("A,r1,3\nB,r1,2\nB,r2,4\n"))

    def test_unknown_company(self):
        with pytest.raises(UnknownCompanyError):
            load_ratings(io.StringIO("A,r1,3\nZ,r1,2\n"), company_ids=["A"])

    def test_non_numeric(self):
        with pytest.raises(ParseError) as exc:
            load_ratings(io.StringIO("A,r1,3\nB,r1,high\n"))
        assert exc.value.line == 2

    def test_generator_count(self, small_world):
        rs = load_ratings(io.StringIO(small_world.ratings_text()), [c.id for c in small_world.companies])
        assert len(rs) == small_world.config.n_rated
        assert min(rs.ratings.values()) == 0.0 and max(rs.ratings.values()) == 1.0


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(-1e6, 1e6), min_size=2))
def test_minmax_range(values):
    if len(set(values.values())) < 2:
        with pytest.raises(DegenerateNormalizationError):
            minmax(values)
        return
    out = minmax(values)
    assert all(0.0 <= v <= 1.0 for v in out.values())
    assert min(out.values()) == 0.0 and max(out.values()) == 1.0


class TestTrain:
    def test_zero_learning_rate(self):
        feats, targets = toy_set(10)
        params, hist = train(feats, targets, HYPER, TrainConfig(epochs=5, learning_rate=0.0))
        init = init_params(HYPER)
        assert all(np.array_equal(params[n], init[n]) for n in PARAM_NAMES)
        assert len(set(hist)) == 1

    def test_memorize_one_example(self):
        feats, _ = toy_set(1)
        cid = next(iter(feats))
        feats = {cid: feats[cid], "dup": feats[cid]}
        _, hist = train(feats, {cid: 0.9, "dup": 0.9}, HYPER, TrainConfig(epochs=400, learning_rate=0.5))
        assert hist[-1] < 1e-3

    def test_loss_falls_on_planted_signal(self):
        feats, targets = toy_set(220, seed=1)
        _, hist = train(feats, targets, HYPER, TrainConfig(epochs=2000, learning_rate=0.1))
        assert hist[-1] <= 0.05 * hist[0]
        assert all(np.isfinite(h) and h >= 0 for h in hist)

    def test_reproducible(self):
        feats, targets = toy_set(30)
        cfg = TrainConfig(epochs=20, seed=4)
        a, ha = train(feats, targets, HYPER, cfg)
        b, hb = train(feats, targets, HYPER, cfg)
        assert ha == hb
        assert all(np.array_equal(a[n], b[n]) for n in PARAM_NAMES)

    def test_holdout_never_used(self):
        feats, targets = toy_set(40)
        cfg = TrainConfig(epochs=10, holdout_fraction=0.25, seed=2)
        kept, held = holdout_split(list(targets), cfg)
        assert len(held) == 10 and not set(kept) & set(held)
        a, ha = train(feats, targets, HYPER, cfg)
        # the held-out companies' targets can change without affecting training
        changed = {c: (1.0 - v if c in held else v) for c, v in targets.items()}
        b, hb = train(feats, changed, HYPER, cfg)
        assert ha == hb
        assert all(np.array_equal(a[n], b[n]) for n in PARAM_NAMES)

    def test_mismatch(self):
        feats, targets = toy_set(5)
        targets["ghost"] = 0.5
        with pytest.raises(FeatureTargetMismatch):
            train(feats, targets, HYPER, TrainConfig(epochs=1))
        with pytest.raises(FeatureTargetMismatch):
            train(feats, {"c000": 0.1}, HYPER, TrainConfig(epochs=1))

    def test_wrong_image_shape(self):
        feats = {"a": (np.zeros((15, 11)), 0.1), "b": (np.zeros((15, 11)), 0.2)}
        with pytest.raises(FeatureTargetMismatch):
            train(feats, {"a": 0.0, "b": 1.0}, HYPER, TrainConfig(epochs=1))

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(learning_rate=-1.0), dict(holdout_fraction=1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_fit_scorer_reference(self):
        feats, targets = toy_set(12)
        images = {c: f[0] for c, f in feats.items()}
        data1 = {c: i + 1 for i, c in enumerate(sorted(feats))}
        subset = {c: targets[c] for c in sorted(targets)[:6]}
        scorer = fit_scorer(images, data1, subset, HYPER, TrainConfig(epochs=2))
        assert scorer.data1_ref == 6
        assert scorer.inputs(images, data1)["c011"][1] == 1.0


class TestRanking:
    def test_order_and_ties(self):
        r = Ranking.from_scores({"b": 0.5, "a": 0.5, "c": 0.9, "d": 0.1})
        assert r.ids() == ["c", "a", "b", "d"]
        assert r.positions() == {"c": 1, "a": 2, "b": 3, "d": 4}

    def test_identical_features_adjacent(self):
        feats, targets = toy_set(6)
        params, _ = train(feats, targets, HYPER, TrainConfig(epochs=3))
        feats["c999"] = feats["c002"]
        ids = predict_all(params, feats).ids()
        i, j = ids.index("c002"), ids.index("c999")
        assert j == i + 1

    def test_scores_open_interval_and_sorted(self):
        feats, targets = toy_set(25)
        params, _ = train(feats, targets, HYPER, TrainConfig(epochs=3))
        r = predict_all(params, feats)
        scores = [s for _, s in r.entries]
        assert all(0 < s < 1 for s in scores)
        keys = [(-s, c) for c, s in r.entries]
        assert keys == sorted(keys)
        assert len(r) == 25

    def test_csv_round_trip_and_bytes(self):
        feats, targets = toy_set(8)
        params, _ = train(feats, targets, HYPER, TrainConfig(epochs=2))
        a = predict_all(params, feats).to_csv()
        assert a == predict_all(params, feats).to_csv()
        assert a.splitlines()[0].startswith("1,")
        assert load_ranking(a).ids() == predict_all(params, feats).ids()

    def test_score_all_matches_forward(self):
        from credrank.network import forward
        feats, targets = toy_set(4)
        params, _ = train(feats, targets, HYPER, TrainConfig(epochs=2))
        scores = score_all(params, feats)
        for cid, (img, m) in feats.items():
            assert scores[cid] == pytest.approx(forward(params, img, m)[0], abs=1e-14)
