import numpy as np
import pytest

from greenhop import gbt
from greenhop.errors import InvalidInput
from greenhop.gbt import GBTParams
from oracles import naive_booster


def test_split_search_equals_exhaustive_oracle(rng):
    X = rng.normal(size=(200, 8))
    y = np.sin(X[:, 0]) + X[:, 3] * X[:, 5] + 0.1 * rng.normal(size=200)
    p = GBTParams(max_depth=3, rounds=8, learning_rate=0.3, min_samples_leaf=5, max_bins=256)
    model = gbt.fit_regressor(X, y, p)
    hist, pred = naive_booster(X, y, p)
    assert np.allclose(model.history, hist, atol=1e-6, rtol=0)
    assert np.allclose(model.predict(X), pred, atol=1e-6)


def test_candidate_thresholds_are_midpoints():
    assert gbt.candidate_thresholds(np.array([3.0, 1.0, 2.0, 2.0]), 256).tolist() == [1.5, 2.5]
    assert gbt.candidate_thresholds(np.ones(5), 256).size == 0
    assert gbt.candidate_thresholds(np.arange(1000.0), 16).size <= 15


def test_constant_target():
    X = np.random.default_rng(0).normal(size=(50, 3))
    m = gbt.fit_regressor(X, np.full(50, 2.5), GBTParams(rounds=10))
    assert np.allclose(m.predict(X), 2.5)


def test_exact_fit_micro_case():
    p = GBTParams(max_depth=1, rounds=1, learning_rate=1.0, min_samples_leaf=1)
    m = gbt.fit_regressor([[0.0], [1.0]], [0.0, 1.0], p)
    assert m.base_score[0] == 0.5
    assert sorted(m.rounds[0][0].value[1:].tolist()) == [-0.5, 0.5]
    assert m.predict([[0.0], [1.0]]).tolist() == [0.0, 1.0]


@pytest.mark.parametrize("seed", range(5))
def test_regression_mse_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(300, 6))
    y = X @ rng.normal(size=6) + rng.normal(size=300)
    m = gbt.fit_regressor(X, y, GBTParams(rounds=40, max_depth=4))
    assert np.all(np.diff(m.history) <= 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_multiclass_logloss_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(240, 5))
    y = np.argmax(X[:, :3] + 0.5 * rng.normal(size=(240, 3)), axis=1)
    m = gbt.fit_classifier(X, y, 3, GBTParams(rounds=30, max_depth=3, learning_rate=0.5))
    assert np.all(np.diff(m.history) <= 1e-12)
    P = m.predict(X)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_separable_and_blobs(rng):
    X = np.r_[rng.uniform(0, 1, 30), rng.uniform(2, 3, 30)][:, None]
    y = np.r_[np.zeros(30, int), np.ones(30, int)]
    m = gbt.fit_classifier(X, y, 2, GBTParams(rounds=20))
    assert np.mean(m.predict(X).argmax(1) == y) == 1.0
    centers = np.array([[0, 0], [4, 0], [0, 4]])
    lab = np.repeat(np.arange(3), 100)
    Xb = centers[lab] + 0.3 * rng.normal(size=(300, 2))
    mb = gbt.fit_classifier(Xb, lab, 3, GBTParams(rounds=30))
    assert np.mean(mb.predict(Xb).argmax(1) == lab) >= 0.99
    assert np.all(np.diff(mb.history) <= 1e-12)


def test_missing_class_rejected(rng):
    with pytest.raises(InvalidInput, match="oversample"):
        gbt.fit_classifier(rng.normal(size=(10, 2)), np.zeros(10, int), 3)


def test_predict_plumbing(rng):
    empty = gbt.zero_regressor(3)
    assert np.all(empty.predict(rng.normal(size=(4, 3))) == 0)
    stump = gbt.TreeEnsemble("regression", np.array([1.0]), [[gbt.Tree.leaf(4.0)]], 0.5, 0, 2)
    assert np.all(stump.predict(np.zeros((3, 2))) == 3.0)
    with pytest.raises(InvalidInput):
        stump.predict(np.zeros((3, 5)))
    with pytest.raises(InvalidInput):
        gbt.fit_regressor(np.zeros((0, 2)), [])
    with pytest.raises(InvalidInput):
        gbt.fit_regressor(np.zeros((3, 0)), [1, 2, 3])


def test_text_round_trip_bit_identical(rng):
    X = rng.normal(size=(200, 4))
    y = rng.integers(0, 3, 200)
    for m in (gbt.fit_regressor(X, X[:, 0] ** 2, GBTParams(rounds=15)),
              gbt.fit_classifier(X, y, 3, GBTParams(rounds=10))):
        back = gbt.from_dict(gbt.to_dict(m))
        assert np.array_equal(back.raw_scores(X), m.raw_scores(X))


def test_monotone_feature_transform_invariance(rng):
    X = rng.normal(size=(200, 3))
    y = X[:, 0] - 2 * X[:, 1] ** 2
    p = GBTParams(rounds=10, max_depth=3)
    a = gbt.fit_regressor(X, y, p)
    Z = np.exp(X)
    b = gbt.fit_regressor(Z, y, p)
    assert np.allclose(a.predict(X), b.predict(Z), atol=1e-12)


def test_determinism_and_depth(rng):
    X = rng.normal(size=(150, 4))
    y = rng.normal(size=150)
    p = GBTParams(rounds=5, max_depth=2, subsample=0.7, seed=3)
    a, b = gbt.fit_regressor(X, y, p), gbt.fit_regressor(X, y, p)
    assert np.array_equal(a.predict(X), b.predict(X))
    assert all(t.depth() <= 2 for t in a.trees)


def test_early_stopping_flag(rng):
    X = rng.normal(size=(200, 3))
    y = X[:, 0] + rng.normal(size=200)
    Xv = rng.normal(size=(100, 3))
    yv = Xv[:, 0] + rng.normal(size=100)
    m = gbt.fit_regressor(X, y, GBTParams(rounds=200, early_stopping_rounds=5), eval_set=(Xv, yv))
    assert len(m.rounds) < 200
