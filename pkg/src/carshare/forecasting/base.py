"""Shared forecasting machinery: temporal split, evaluation, balance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..features import EventPanel


@dataclass(frozen=True)
class SplitSpec:
    """Temporal train/test split: earliest ``train_fraction`` of days train."""

    train_fraction: float = 0.80


def split(panel: EventPanel, spec: SplitSpec = SplitSpec()) -> tuple[EventPanel, EventPanel]:
    """Split a panel into (train, test) by calendar day, never shuffled."""
    if panel.n_days < 5:
        raise ValueError(f"need at least 5 days to split, got {panel.n_days}")
    order = np.argsort(np.array(panel.dates, dtype="datetime64[D]"), kind="stable")
    if not np.array_equal(order, np.arange(panel.n_days)):
        panel = EventPanel(
            cells=panel.cells,
            dates=[panel.dates[i] for i in order],
            bin_minutes=panel.bin_minutes,
            kind=panel.kind,
            values=panel.values[:, order, :],
        )
    n_train = int(np.floor(panel.n_days * spec.train_fraction))
    n_train = min(max(n_train, 1), panel.n_days - 1)
    return panel.slice_days(0, n_train), panel.slice_days(n_train, panel.n_days)


class Forecaster:
    """Fitted per-cell demand predictor.

    ``predict_panel`` returns an array shaped like ``test.values``; every
    entry is finite and non-negative (negative raw outputs are clamped).
    """

    method = "?"

    def fit(self, train: EventPanel) -> "Forecaster":
        raise NotImplementedError

    def predict_panel(self, test: EventPanel) -> np.ndarray:
        raise NotImplementedError

    def predict_cell(self, test: EventPanel, cell) -> np.ndarray:
        """Expected event counts for one cell, shaped (test days, bins)."""
        return self.predict_panel(test)[test.cell_index(cell)]

    @staticmethod
    def _finalize(pred: np.ndarray) -> np.ndarray:
        if not np.isfinite(pred).all():
            raise FloatingPointError("forecaster produced non-finite predictions")
        return np.maximum(pred, 0.0)


def evaluate(forecaster: Forecaster, test: EventPanel) -> pd.DataFrame:
    """Per-cell RMSE of a fitted forecaster on the test panel."""
    pred = forecaster.predict_panel(test)
    return rmse_table(pred, test)


def rmse_table(pred: np.ndarray, test: EventPanel) -> pd.DataFrame:
    if pred.shape != test.values.shape:
        raise ValueError(f"prediction shape {pred.shape} != test shape {test.values.shape}")
    err = np.sqrt(np.mean((pred - test.values) ** 2, axis=(1, 2)))
    return pd.DataFrame(
        {"row": [c.row for c in test.cells], "col": [c.col for c in test.cells], "rmse": err}
    )


def rmse_summary(rmse: pd.DataFrame) -> dict:
    """Boxplot-ready distribution summary of per-cell RMSE."""
    q = rmse["rmse"].quantile([0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "n_cells": int(len(rmse)),
        "min": float(q.iloc[0]),
        "q1": float(q.iloc[1]),
        "median": float(q.iloc[2]),
        "q3": float(q.iloc[3]),
        "max": float(q.iloc[4]),
        "mean": float(rmse["rmse"].mean()),
    }


def best_method_counts(results: dict[str, pd.DataFrame]) -> pd.DataFrame:
    """How many cells each method wins (lowest RMSE; ties split by listing order)."""
    names = list(results)
    mat = np.column_stack([results[n]["rmse"].to_numpy() for n in names])
    winners = np.argmin(mat, axis=1)
    counts = [int((winners == i).sum()) for i in range(len(names))]
    return pd.DataFrame({"method": names, "cells_won": counts})


def balance(vehicles, pick_hat, drop_hat) -> pd.DataFrame:
    """Expected per-cell vehicle balance over the next relocation window.

    All three inputs are aligned per-cell arrays (or Series); the result
    satisfies balance = vehicles + drop_hat - pick_hat exactly and flags
    deficit cells.
    """
    v = np.asarray(vehicles, dtype=float)
    p = np.asarray(pick_hat, dtype=float)
    d = np.asarray(drop_hat, dtype=float)
    if not (v.shape == p.shape == d.shape):
        raise ValueError("vehicles, pick_hat and drop_hat must align")
    b = v + d - p
    return pd.DataFrame(
        {"vehicles": v, "drop_hat": d, "pick_hat": p, "balance": b, "deficit": b < 0}
    )


def design_matrix(table: pd.DataFrame) -> tuple[np.ndarray, list[str]]:
    """Feature-table rows -> numeric design matrix for RF / MLP.

    Day of week is one-of-k encoded as six dummies with Sunday as the
    reference level.
    """
    dow = table["day_of_week"].to_numpy()
    cols = [table["bin"].to_numpy(dtype=float)]
    names = ["bin"]
    for k, day in enumerate(("mon", "tue", "wed", "thu", "fri", "sat")):
        cols.append((dow == k).astype(float))
        names.append(f"dow_{day}")
    cols.append(table["is_weekday"].to_numpy(dtype=float))
    names.append("is_weekday")
    cols.append(table["neighbor_avg"].to_numpy(dtype=float))
    names.append("neighbor_avg")
    return np.column_stack(cols), names


def contiguous_day_folds(dates: pd.Series, n_folds: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cross-validation folds as contiguous day blocks (limits temporal leakage)."""
    uniq = np.array(sorted(pd.unique(dates)))
    n_folds = min(n_folds, len(uniq))
    blocks = np.array_split(uniq, n_folds)
    folds = []
    date_arr = dates.to_numpy()
    for b in blocks:
        val = np.isin(date_arr, b)
        folds.append((np.nonzero(~val)[0], np.nonzero(val)[0]))
    return folds
