"""Single-hidden-layer perceptron regressor (tanh hidden, linear output).

Inputs and target are min-max scaled to [-1, 1], the sensitive range of the
activation; training is full-batch Adam backpropagation with early stopping
on a held-out fifth of the training rows.  A NaN loss triggers up to three
restarts at a smaller step before the caller falls back to the historical
average.
"""

from __future__ import annotations

import logging

import numpy as np

from ..features import EventPanel, build_feature_table
from ..grid import Grid
from .base import Forecaster, contiguous_day_folds, design_matrix
from .baselines import HistoricalForecaster

logger = logging.getLogger(__name__)


class _MinMaxScaler:
    """Column-wise map onto [-1, 1]; constant columns map to 0."""

    def fit(self, X: np.ndarray) -> "_MinMaxScaler":
        X = np.atleast_2d(X)
        self.lo = X.min(axis=0)
        self.hi = X.max(axis=0)
        self.span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return self

    def scale(self, X):
        return 2.0 * (X - self.lo) / self.span - 1.0

    def unscale(self, Xs):
        return (Xs + 1.0) / 2.0 * self.span + self.lo


class TanhPerceptron:
    def __init__(self, hidden: int = 5, lr: float = 0.02, max_epochs: int = 1500,
                 patience: int = 80, val_fraction: float = 0.2, seed: int = 0,
                 max_restarts: int = 3):
        self.hidden = hidden
        self.lr = lr
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed
        self.max_restarts = max_restarts

    def fit(self, X: np.ndarray, y: np.ndarray) -> "TanhPerceptron":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.constant_ = float(y[0]) if np.ptp(y) == 0.0 else None
        if self.constant_ is not None:
            return self
        self.x_scaler = _MinMaxScaler().fit(X)
        self.y_scaler = _MinMaxScaler().fit(y[:, None])
        Xs = self.x_scaler.scale(X)
        ys = self.y_scaler.scale(y[:, None]).ravel()

        rng = np.random.default_rng(self.seed)
        n = len(ys)
        n_val = max(1, int(round(self.val_fraction * n))) if n >= 10 else 0
        perm = rng.permutation(n)
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
        if len(tr_idx) == 0:
            tr_idx = perm
            val_idx = perm

        lr = self.lr
        for attempt in range(self.max_restarts + 1):
            params = self._train(Xs[tr_idx], ys[tr_idx], Xs[val_idx], ys[val_idx], rng, lr)
            if params is not None:
                self.params_ = params
                return self
            lr /= 4.0
            logger.warning("mlp: loss diverged, restarting with lr=%g", lr)
        raise FloatingPointError("mlp training diverged after restarts")

    def _train(self, Xt, yt, Xv, yv, rng, lr):
        h, p = self.hidden, Xt.shape[1]
        W1 = rng.normal(0.0, 1.0 / np.sqrt(p), (p, h))
        b1 = np.zeros(h)
        W2 = rng.normal(0.0, 1.0 / np.sqrt(h), h)
        b2 = 0.0
        mom = [np.zeros_like(v) for v in (W1, b1, W2)]
        vel = [np.zeros_like(v) for v in (W1, b1, W2)]
        m_b2 = v_b2 = 0.0
        beta1, beta2, eps = 0.9, 0.999, 1e-8

        best = None
        best_val = np.inf
        stale = 0
        n = len(yt)
        for epoch in range(1, self.max_epochs + 1):
            A = np.tanh(Xt @ W1 + b1)
            out = A @ W2 + b2
            err = out - yt
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                return None
            g_out = 2.0 * err / n
            gW2 = A.T @ g_out
            gb2 = float(g_out.sum())
            g_hidden = np.outer(g_out, W2) * (1.0 - A * A)
            gW1 = Xt.T @ g_hidden
            gb1 = g_hidden.sum(axis=0)

            for i, (v, g) in enumerate(((W1, gW1), (b1, gb1), (W2, gW2))):
                mom[i] = beta1 * mom[i] + (1 - beta1) * g
                vel[i] = beta2 * vel[i] + (1 - beta2) * g * g
                mhat = mom[i] / (1 - beta1**epoch)
                vhat = vel[i] / (1 - beta2**epoch)
                v -= lr * mhat / (np.sqrt(vhat) + eps)
            m_b2 = beta1 * m_b2 + (1 - beta1) * gb2
            v_b2 = beta2 * v_b2 + (1 - beta2) * gb2 * gb2
            b2 -= lr * (m_b2 / (1 - beta1**epoch)) / (np.sqrt(v_b2 / (1 - beta2**epoch)) + eps)

            val = float(np.mean((np.tanh(Xv @ W1 + b1) @ W2 + b2 - yv) ** 2))
            if not np.isfinite(val):
                return None
            if val < best_val - 1e-9:
                best_val = val
                best = (W1.copy(), b1.copy(), W2.copy(), b2)
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        return best


    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.constant_ is not None:
            return np.full(len(X), self.constant_)
        W1, b1, W2, b2 = self.params_
        Xs = self.x_scaler.scale(X)
        out = np.tanh(Xs @ W1 + b1) @ W2 + b2
        return self.y_scaler.unscale(out[:, None]).ravel()


def select_hidden(X, y, candidates, folds, seed=0, **kw):
    """Hidden-layer size by cross-validated MSE (ties to the smaller size)."""
    best_h, best_err = None, np.inf
    for h in candidates:
        err = 0.0
        for tr, va in folds:
            net = TanhPerceptron(hidden=h, seed=seed, **kw)
            net.fit(X[tr], y[tr])
            err += float(np.mean((net.predict(X[va]) - y[va]) ** 2))
        err /= len(folds)
        if err < best_err - 1e-12:
            best_h, best_err = h, err
    return best_h


class MlpForecaster(Forecaster):
    """One perceptron per cell; hidden size fixed or 5-fold cross-validated.

    ``hidden=None`` searches the sizes in ``hidden_candidates`` (a light
    sweep through 1..30); cells whose training diverges repeatedly fall
    back to the historical average.
    """

    method = "MLP"

    def __init__(self, grid: Grid, hidden: int | None = None,
                 hidden_candidates=(1, 2, 4, 8, 16, 30), seed: int = 0,
                 max_epochs: int = 600):
        self.grid = grid
        self.hidden = hidden
        self.hidden_candidates = hidden_candidates
        self.seed = seed
        self.max_epochs = max_epochs

    def fit(self, train: EventPanel) -> "MlpForecaster":
        table = build_feature_table(train, self.grid, min_total=None)
        if len(table) < 50:
            raise ValueError("need at least 50 training rows")
        X, _ = design_matrix(table)
        y = table["target"].to_numpy(dtype=float)
        self._fallback = HistoricalForecaster("HA").fit(train)
        self.models_ = {}
        for key, sub in table.groupby(["row", "col"], sort=True):
            rows = sub.index.to_numpy()
            Xc, yc = X[rows], y[rows]
            h = self.hidden
            try:
                if h is None:
                    folds = contiguous_day_folds(sub["date"], 5)
                    h = select_hidden(Xc, yc, self.hidden_candidates, folds,
                                      seed=self.seed, max_epochs=self.max_epochs)
                net = TanhPerceptron(hidden=h, seed=self.seed, max_epochs=self.max_epochs)
                self.models_[key] = net.fit(Xc, yc)
            except FloatingPointError:
                logger.warning("mlp: cell %s fell back to HA", key)
                self.models_[key] = None
        return self

    def predict_panel(self, test: EventPanel) -> np.ndarray:
        table = build_feature_table(test, self.grid, min_total=None)
        X, _ = design_matrix(table)
        pred = self._fallback.predict_panel(test)
        date_idx = {d: i for i, d in enumerate(test.dates)}
        for key, sub in table.groupby(["row", "col"], sort=True):
            model = self.models_.get(key)
            if model is None:
                continue
            rows = sub.index.to_numpy()
            out = model.predict(X[rows])
            ci = test.cell_index(key)
            d_idx = np.array([date_idx[d] for d in sub["date"]])
            pred[ci, d_idx, sub["bin"].to_numpy()] = out
        return self._finalize(pred)
