from datetime import date, timedelta

import numpy as np
import pytest

from carshare.features import EventPanel
from carshare.forecasting import SarimaForecaster, fit_sarima_series, split
from carshare.forecasting.sarima import (
    _difference,
    _undifference,
    fit_sarima_one,
    forecast_sarima,
    search_sarima,
)
from carshare.grid import CellId


def _panel(values, bin_minutes=60):
    values = np.asarray(values, dtype=float)
    cells = [CellId(0, i) for i in range(values.shape[0])]
    dates = [date(2015, 5, 18) + timedelta(days=d) for d in range(values.shape[1])]
    return EventPanel(cells=cells, dates=dates, bin_minutes=bin_minutes,
                      kind="pickup", values=values)


def test_white_noise_selects_trivial_model_and_mean_forecast():
    rng = np.random.default_rng(0)
    y = rng.normal(5.0, 1.0, 24 * 36)
    fit = search_sarima(y, 24, stepwise=True)
    p, d, q = fit["order"]
    P, D, Q = fit["seasonal_order"]
    assert d == 0 and D == 0
    assert p + q + P + Q <= 2  # at most marginal spurious terms
    f = forecast_sarima(fit, 24 * 9)
    assert abs(f.mean() - y.mean()) < 2.0 / np.sqrt(len(y))


def test_pure_seasonal_pattern_reproduced_exactly():
    pattern = 3.0 + 2.0 * np.sin(2 * np.pi * np.arange(24) / 24)
    y = np.tile(pattern, 36)
    fit = search_sarima(y, 24, stepwise=True)
    f = forecast_sarima(fit, 24 * 9)
    assert np.sqrt(np.mean((f - np.tile(pattern, 9)) ** 2)) < 1e-6


def test_too_short_series_is_an_error():
    values = np.random.default_rng(1).poisson(2.0, (1, 2, 24)).astype(float)
    with pytest.raises(ValueError):
        SarimaForecaster().fit(_panel(values))


def test_ar1_coefficient_recovered():
    rng = np.random.default_rng(2)
    e = rng.normal(0, 1, 3000)
    y = np.zeros(3000)
    for t in range(1, 3000):
        y[t] = 0.7 * y[t - 1] + e[t]
    fit = fit_sarima_one(y, (1, 0, 0), (0, 0, 0), 1)
    assert fit["ar"][0] == pytest.approx(0.7, abs=0.05)


def test_ma1_coefficient_recovered():
    rng = np.random.default_rng(3)
    e = rng.normal(0, 1, 4000)
    y = e[1:] + 0.6 * e[:-1]
    fit = fit_sarima_one(y, (0, 0, 1), (0, 0, 0), 1)
    assert fit["ma"][0] == pytest.approx(0.6, abs=0.07)


def test_differencing_roundtrip():
    rng = np.random.default_rng(4)
    y = rng.normal(0, 1, 200).cumsum() + np.tile(rng.normal(0, 1, 10), 20).cumsum()
    for d, D in ((1, 0), (0, 1), (1, 1)):
        w, hist = _difference(y, d, D, 10)
        future = rng.normal(0, 1, 30)
        rebuilt = _undifference(future, hist)
        # appending the rebuilt values and re-differencing recovers them
        ext = np.concatenate([y, rebuilt])
        w2, _ = _difference(ext, d, D, 10)
        assert np.allclose(w2[-30:], future, atol=1e-9)


def test_predictions_clamped_non_negative():
    rng = np.random.default_rng(5)
    values = np.maximum(
        rng.normal(0.3, 1.0, (2, 10, 24)), 0.0
    )  # sparse series drive raw forecasts negative
    panel = _panel(values)
    train, test = split(panel)
    fc = SarimaForecaster(stepwise=True).fit(train)
    pred = fc.predict_panel(test)
    assert np.isfinite(pred).all()
    assert (pred >= 0).all()


def test_spec_reports_selected_orders():
    rng = np.random.default_rng(6)
    y = rng.poisson(np.tile(2 + np.sin(2 * np.pi * np.arange(24) / 24), 20)).astype(float)
    spec = fit_sarima_series(y, 24, stepwise=True)
    assert spec is not None
    assert len(spec.order) == 3 and len(spec.seasonal_order) == 3
    assert np.isfinite(spec.aicc)
    assert spec.season_length == 24


def test_exhaustive_and_stepwise_agree_on_strong_structure():
    pattern = 3.0 + 2.0 * np.sin(2 * np.pi * np.arange(12) / 12)
    rng = np.random.default_rng(7)
    y = np.tile(pattern, 30) + rng.normal(0, 0.05, 360)
    small = {"p": 1, "q": 1, "P": 1, "Q": 1}
    full = search_sarima(y, 12, bounds=small, stepwise=False)
    quick = search_sarima(y, 12, bounds=small, stepwise=True)
    assert full["seasonal_order"][1] == 1  # seasonal differencing found
    assert quick["aicc"] <= full["aicc"] * 1.001 + 5.0
