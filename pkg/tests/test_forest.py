import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xferepi import forest as rf


def exhaustive_best_reduction(X, y, w):
    """Largest weighted-SSE reduction over all features and midpoint thresholds."""
    def sse(mask):
        ww, yy = w[mask], y[mask]
        if ww.sum() == 0:
            return 0.0
        m = np.dot(ww, yy) / ww.sum()
        return float(np.dot(ww, (yy - m) ** 2))

    total = sse(np.ones(len(y), bool))
    best = 0.0
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            left = X[:, f] <= (a + b) / 2
            best = max(best, total - sse(left) - sse(~left))
    return best, total


def split_reduction(tree, X, y, w):
    f, thr = tree.feature[0], tree.threshold[0]
    left = X[:, f] <= thr

    def sse(mask):
        ww, yy = w[mask], y[mask]
        m = np.dot(ww, yy) / ww.sum()
        return float(np.dot(ww, (yy - m) ** 2))

    return sse(np.ones(len(y), bool)) - sse(left) - sse(~left)


def test_depth_one_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        n, p = rng.integers(5, 51), rng.integers(1, 4)
        X = rng.integers(0, 8, size=(n, p)).astype(float)
        y = rng.normal(size=n)
        w = rng.uniform(0.1, 2.0, n)
        tree = rf.fit_tree(X, y, w, max_depth=1)
        best, _ = exhaustive_best_reduction(X, y, w)
        if tree.n_nodes == 1:
            assert best < 1e-9
        else:
            assert split_reduction(tree, X, y, w) == pytest.approx(best, abs=1e-9)


def test_constant_target():
    X = np.random.default_rng(0).normal(size=(40, 3))
    model = rf.fit_forest(X, np.full(40, 3.5), config=rf.ForestConfig(n_trees=5))
    assert np.allclose(model.predict(X), 3.5)
    assert all(t.n_nodes == 1 for t in model.trees)


def test_step_function_threshold():
    x = np.array([-3.0, -2.0, -0.5, 0.0, 0.7, 1.5, 4.0])
    y = (x > 0).astype(float)
    tree = rf.fit_tree(x[:, None], y, max_depth=1)
    assert 0 < tree.threshold[0] <= 0.7
    assert tree.threshold[0] == pytest.approx((0.0 + 0.7) / 2)


def test_ties_prefer_lowest_feature():
    # both features split the data perfectly
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
    y = np.array([0, 0, 1, 1], dtype=float)
    tree = rf.fit_tree(X, y, max_depth=1)
    assert tree.feature[0] == 0


def test_default_tree_count():
    assert rf.ForestConfig().n_trees == 50
    assert rf.ForestConfig().resolved_max_features(9) == 3


def _leaf_tree(value):
    return rf.Tree(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32),
                   np.array([-1], np.int32), np.array([value], float), np.ones(1))


def test_mean_of_trees():
    model = rf.ForestModel((_leaf_tree(2.0), _leaf_tree(4.0)), n_features=2)
    assert model.predict(np.zeros((3, 2))).tolist() == [3.0, 3.0, 3.0]
    single = rf.ForestModel((_leaf_tree(1.25),), n_features=2)
    assert single.predict(np.zeros((1, 2)))[0] == 1.25


def test_predictions_are_clipped():
    model = rf.ForestModel((_leaf_tree(-2.0),), n_features=1)
    assert model.predict_raw(np.zeros((1, 1)))[0] == -2.0
    assert model.predict(np.zeros((1, 1)))[0] == 0.0


def test_arity_mismatch():
    model = rf.fit_forest(np.zeros((4, 3)), np.arange(4.0), config=rf.ForestConfig(n_trees=1))
    with pytest.raises(ValueError, match="arity"):
        model.predict(np.zeros((2, 2)))


def test_bad_weights():
    X, y = np.zeros((3, 1)), np.ones(3)
    with pytest.raises(ValueError):
        rf.fit_forest(X, y, np.zeros(3))
    with pytest.raises(ValueError):
        rf.fit_forest(X, y, np.array([1.0, -1.0, 1.0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), n=st.integers(2, 60))
def test_predictions_within_target_range(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = rng.normal(size=n)
    model = rf.fit_forest(X, y, config=rf.ForestConfig(n_trees=7, seed=seed))
    pred = model.predict_raw(rng.normal(size=(20, 3)) * 3)
    assert np.all(pred >= y.min() - 1e-12) and np.all(pred <= y.max() + 1e-12)


def test_fixed_seed_gives_identical_forests():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(300, 9)), rng.normal(size=300)
    cfg = rf.ForestConfig(n_trees=8, seed=42)
    a = rf.forest_bytes(rf.fit_forest(X, y, config=cfg))
    b = rf.forest_bytes(rf.fit_forest(X, y, config=cfg))
    c = rf.forest_bytes(rf.fit_forest(X, y, config=rf.ForestConfig(n_trees=8, seed=43)))
    assert a == b and a != c


def test_parallel_fit_matches_serial():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(200, 4)), rng.normal(size=200)
    a = rf.fit_forest(X, y, config=rf.ForestConfig(n_trees=6, seed=1))
    b = rf.fit_forest(X, y, config=rf.ForestConfig(n_trees=6, seed=1, n_jobs=3))
    assert rf.forest_bytes(a) == rf.forest_bytes(b)


def test_duplicate_row_equals_double_weight():
    rng = np.random.default_rng(8)
    X, y = rng.integers(0, 5, size=(30, 2)).astype(float), rng.normal(size=30)
    w = np.ones(30)
    w[3] = 2.0
    Xd, yd = np.vstack([X, X[3:4]]), np.r_[y, y[3]]
    cfg = dict(max_features=2, seed=0)
    a = rf.fit_tree(X, y, w, **cfg)
    b = rf.fit_tree(Xd, yd, None, **cfg)
    for attr in ("feature", "threshold", "left", "right"):
        assert np.array_equal(getattr(a, attr), getattr(b, attr))
    assert np.allclose(a.value, b.value) and np.allclose(a.weight, b.weight)


def test_zero_weight_rows_are_ignored():
    X = np.arange(10.0)[:, None]
    y = np.r_[np.zeros(5), np.ones(5)]
    w = np.r_[np.ones(8), np.zeros(2)]
    a = rf.fit_tree(X, y, w)
    b = rf.fit_tree(X[:8], y[:8])
    assert np.array_equal(a.feature, b.feature) and np.allclose(a.value, b.value)


def test_leaf_size_and_depth_limits():
    rng = np.random.default_rng(9)
    X, y = rng.normal(size=(200, 3)), rng.normal(size=200)
    tree = rf.fit_tree(X, y, max_depth=3)
    assert tree.depth <= 3
    tree = rf.fit_tree(X, y, min_samples_leaf=20)
    leaves = tree.feature == -1
    assert tree.weight[leaves].min() >= 20


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    X, y = rng.normal(size=(100, 9)), rng.normal(size=100)
    model = rf.fit_forest(X, y, config=rf.ForestConfig(n_trees=4, seed=3))
    rf.save_forest(model, tmp_path / "f.npz")
    back = rf.load_forest(tmp_path / "f.npz")
    assert back.config == model.config
    assert np.array_equal(back.predict(X), model.predict(X))
    for a, b in zip(model.trees, back.trees):
        assert np.array_equal(a.threshold, b.threshold) and np.array_equal(a.value, b.value)
