"""Historical average / median baselines, optionally split weekday vs weekend."""

from __future__ import annotations

import logging

import numpy as np

from ..features import EventPanel
from .base import Forecaster

logger = logging.getLogger(__name__)

_VARIANTS = ("HA", "HM", "HA+", "HM+")


class HistoricalForecaster(Forecaster):
    """Per-(cell, bin) mean (HA) or median (HM) over training days.

    The '+' variants pool only training days matching the predicted day's
    weekday/weekend type; with no weekend (or weekday) training day they
    fall back to the unsplit pool with a warning.
    """

    def __init__(self, variant: str = "HA"):
        if variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}")
        self.variant = variant
        self.method = variant

    def fit(self, train: EventPanel) -> "HistoricalForecaster":
        if train.n_days == 0:
            raise ValueError("empty training panel")
        stat = np.mean if self.variant.startswith("HA") else np.median
        self._all = stat(train.values, axis=1)  # (C, B)
        if self.variant.endswith("+"):
            wk = train.weekday_mask
            self._by_type = {}
            for flag, name in ((True, "weekday"), (False, "weekend")):
                if (wk == flag).any():
                    self._by_type[flag] = stat(train.values[:, wk == flag, :], axis=1)
                else:
                    logger.warning(
                        "%s: no %s day in training; falling back to unsplit pool",
                        self.variant, name,
                    )
                    self._by_type[flag] = self._all
        return self

    def predict_panel(self, test: EventPanel) -> np.ndarray:
        pred = np.empty_like(test.values, dtype=float)
        wk = test.weekday_mask
        for d in range(test.n_days):
            if self.variant.endswith("+"):
                pred[:, d, :] = self._by_type[bool(wk[d])]
            else:
                pred[:, d, :] = self._all
        return self._finalize(pred)
