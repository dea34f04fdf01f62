import numpy as np
import pytest

from carshare.forecasting import ForestForecaster, MlpForecaster, split
from carshare.forecasting.forest import RegressionForest, select_max_features
from carshare.forecasting.mlp import TanhPerceptron, _MinMaxScaler
from carshare.synth import sample_demand_panel


def test_forest_learns_deterministic_mapping():
    rng = np.random.default_rng(0)
    X = rng.normal(0, 1, (600, 6))
    y = 3.0 * X[:, 2] + 0.01 * rng.normal(0, 1, 600)
    f = RegressionForest(n_trees=100, max_features=4, seed=1).fit(X, y)
    train_rmse = np.sqrt(np.mean((f.predict(X) - y) ** 2))
    assert train_rmse < 0.1 * y.std()


def test_forest_constant_target():
    rng = np.random.default_rng(1)
    X = rng.normal(0, 1, (100, 4))
    f = RegressionForest(n_trees=10, max_features=2, seed=0).fit(X, np.full(100, 5.0))
    assert np.all(f.predict(X) == 5.0)


def test_forest_row_order_invariance_and_seed_determinism():
    rng = np.random.default_rng(2)
    X = rng.normal(0, 1, (300, 5))
    y = X[:, 0] + rng.normal(0, 0.1, 300)
    Xq = rng.normal(0, 1, (50, 5))
    a = RegressionForest(n_trees=30, max_features=3, seed=7).fit(X, y).predict(Xq)
    perm = rng.permutation(300)
    b = RegressionForest(n_trees=30, max_features=3, seed=7).fit(X[perm], y[perm]).predict(Xq)
    assert np.array_equal(a, b)
    c = RegressionForest(n_trees=30, max_features=3, seed=8).fit(X, y).predict(Xq)
    assert not np.array_equal(a, c)


def test_select_max_features_prefers_informative_subset():
    rng = np.random.default_rng(3)
    X = rng.normal(0, 1, (400, 5))
    y = X @ np.array([1.0, 1.0, 1.0, 1.0, 1.0]) + rng.normal(0, 0.1, 400)
    m = select_max_features(X, y, candidates=(2, 4, 5), n_trees=30, seed=0)
    assert m in (2, 4, 5)


def test_forest_forecaster_end_to_end():
    panel, grid, _ = sample_demand_panel(n_rows=2, n_cols=3, n_days=15, seed=4, base_rate=2.0)
    train, test = split(panel)
    fc = ForestForecaster(grid, m=4, n_trees=30, seed=0).fit(train)
    pred = fc.predict_panel(test)
    assert pred.shape == test.values.shape
    assert (pred >= 0).all() and np.isfinite(pred).all()
    # determinism end to end
    pred2 = ForestForecaster(grid, m=4, n_trees=30, seed=0).fit(train).predict_panel(test)
    assert np.array_equal(pred, pred2)


def test_forest_forecaster_cv_picks_m():
    panel, grid, _ = sample_demand_panel(n_rows=1, n_cols=2, n_days=15, seed=5, base_rate=2.0)
    train, _ = split(panel)
    fc = ForestForecaster(grid, m=None, n_trees=20, cv_trees=10, seed=0).fit(train)
    assert all(m in (2, 4, 5) for m in fc.m_used_.values())


def test_scaler_roundtrip():
    rng = np.random.default_rng(6)
    X = rng.normal(3, 7, (50, 3))
    sc = _MinMaxScaler().fit(X)
    assert np.allclose(sc.unscale(sc.scale(X)), X, atol=1e-9)
    assert sc.scale(X).min() >= -1 - 1e-12 and sc.scale(X).max() <= 1 + 1e-12


def test_mlp_linear_target():
    rng = np.random.default_rng(7)
    X = rng.uniform(-2, 2, (600, 1))
    y = 2.0 * X[:, 0]
    test_X = rng.uniform(-2, 2, (200, 1))
    test_y = 2.0 * test_X[:, 0]
    net = TanhPerceptron(hidden=4, seed=0).fit(X, y)
    rmse = np.sqrt(np.mean((net.predict(test_X) - test_y) ** 2))
    assert rmse < 0.05 * test_y.std()


def test_mlp_constant_target():
    rng = np.random.default_rng(8)
    X = rng.normal(0, 1, (120, 3))
    net = TanhPerceptron(hidden=3, seed=0).fit(X, np.full(120, 4.0))
    assert np.allclose(net.predict(X), 4.0, atol=1e-6)


def test_mlp_seed_determinism():
    rng = np.random.default_rng(9)
    X = rng.normal(0, 1, (200, 2))
    y = X[:, 0] - X[:, 1] + rng.normal(0, 0.05, 200)
    p1 = TanhPerceptron(hidden=5, seed=3).fit(X, y).predict(X[:20])
    p2 = TanhPerceptron(hidden=5, seed=3).fit(X, y).predict(X[:20])
    assert np.array_equal(p1, p2)


def test_mlp_forecaster_end_to_end():
    panel, grid, _ = sample_demand_panel(n_rows=2, n_cols=2, n_days=15, seed=10, base_rate=2.0)
    train, test = split(panel)
    fc = MlpForecaster(grid, hidden=6, seed=0).fit(train)
    pred = fc.predict_panel(test)
    assert pred.shape == test.values.shape
    assert (pred >= 0).all() and np.isfinite(pred).all()
