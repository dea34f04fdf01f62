"""Per-cell demand forecasting: baselines, SARIMA, random forest, MLP, WEIKL."""

from .base import (
    Forecaster,
    SplitSpec,
    balance,
    best_method_counts,
    evaluate,
    rmse_summary,
    split,
)
from .baselines import HistoricalForecaster
from .forest import ForestForecaster, RegressionForest
from .mlp import MlpForecaster, TanhPerceptron
from .sarima import SarimaForecaster, SarimaSpec, fit_sarima_series, search_sarima
from .weikl import WeiklForecaster, gap_statistic, kmeans

METHODS = {
    "ha": lambda **kw: HistoricalForecaster("HA"),
    "hm": lambda **kw: HistoricalForecaster("HM"),
    "ha+": lambda **kw: HistoricalForecaster("HA+"),
    "hm+": lambda **kw: HistoricalForecaster("HM+"),
    "sarima": lambda **kw: SarimaForecaster(
        stepwise=kw.get("stepwise", True), seed=kw.get("seed", 0)
    ),
    "rf": lambda **kw: ForestForecaster(
        grid=kw["grid"], seed=kw.get("seed", 0),
        n_trees=kw.get("n_trees", 500), m=kw.get("m"),
    ),
    "mlp": lambda **kw: MlpForecaster(
        grid=kw["grid"], seed=kw.get("seed", 0), hidden=kw.get("hidden")
    ),
    "weikl": lambda **kw: WeiklForecaster(seed=kw.get("seed", 0)),
}

__all__ = [
    "Forecaster",
    "SplitSpec",
    "split",
    "evaluate",
    "rmse_summary",
    "best_method_counts",
    "balance",
    "HistoricalForecaster",
    "SarimaForecaster",
    "SarimaSpec",
    "fit_sarima_series",
    "search_sarima",
    "RegressionForest",
    "ForestForecaster",
    "TanhPerceptron",
    "MlpForecaster",
    "WeiklForecaster",
    "gap_statistic",
    "kmeans",
    "METHODS",
]
