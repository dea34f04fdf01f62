"""Regression random forest built on variance-reduction CART trees.

Trees are grown on bootstrap rows; every split draws a fresh subset of m
features without replacement and scans all midpoints between distinct
sorted values.  Rows are lexicographically canonicalised before any random
draw, so the fit is invariant to the order training rows arrive in and
bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import numpy as np

from ..features import EventPanel, build_feature_table
from ..grid import Grid
from .base import Forecaster, contiguous_day_folds, design_matrix


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def seal(self):
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.value = np.asarray(self.value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            rows = np.nonzero(internal)[0]
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return self.value[node]


def _best_split(X, y, idx, feats, min_leaf):
    """Best (feature, threshold) among `feats` at this node, or None.

    Total child SSE equals a constant minus sum(left)^2/n_l -
    sum(right)^2/n_r, so only the cumulative sums are scored.
    """
    m = len(idx)
    lo, hi = min_leaf - 1, m - min_leaf  # split positions honouring leaf sizes
    if hi <= lo:
        return None
    Xn = X[idx][:, feats]
    order = np.argsort(Xn, axis=0, kind="stable")
    Xs = np.take_along_axis(Xn, order, axis=0)
    Ys = y[idx][order]
    c1 = np.cumsum(Ys, axis=0)
    tot1 = c1[-1]
    nl = np.arange(lo + 1, hi + 1, dtype=float)[:, None]
    left = c1[lo:hi]
    score = left**2 / nl + (tot1 - left) ** 2 / (m - nl)
    valid = Xs[lo + 1:hi + 1] > Xs[lo:hi]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score))
    i, f = divmod(flat, score.shape[1])
    i += lo
    threshold = 0.5 * (Xs[i, f] + Xs[i + 1, f])
    return int(feats[f]), float(threshold)


def _grow_tree(X, y, rng, max_features, min_leaf):
    n, p = X.shape
    tree = _Tree()
    root = tree._new_node()
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        tree.value[node] = float(yn.mean())
        if len(idx) < 2 * min_leaf or np.ptp(yn) == 0.0:
            continue
        feats = rng.choice(p, size=min(max_features, p), replace=False)
        found = _best_split(X, y, idx, feats, min_leaf)
        if found is None:
            continue
        f, thr = found
        mask = X[idx, f] <= thr
        left_id = tree._new_node()
        right_id = tree._new_node()
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = left_id
        tree.right[node] = right_id
        stack.append((left_id, idx[mask]))
        stack.append((right_id, idx[~mask]))
    tree.seal()
    return tree


def _canonical_order(X, y):
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


class RegressionForest:
    """CART forest; prediction is the mean of the per-tree outputs."""

    def __init__(self, n_trees: int = 500, max_features: int = 4, min_leaf: int = 5,
                 bootstrap: bool = True, seed: int = 0):
        self.n_trees = n_trees
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.bootstrap = bootstrap
        self.seed = seed

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RegressionForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        order = _canonical_order(X, y)
        X, y = X[order], y[order]
        n = len(y)
        self.trees_ = []
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        for ss in seeds:
            rng = np.random.default_rng(ss)
            idx = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees_.append(_grow_tree(X[idx], y[idx], rng, self.max_features, self.min_leaf))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        acc = np.zeros(len(X))
        for t in self.trees_:
            acc += t.predict(X)
        return acc / len(self.trees_)


def select_max_features(
    X, y, candidates=(2, 4, 5), folds=None, n_trees=100, min_leaf=5, seed=0
):
    """Pick m by cross-validated MSE (ties go to the smaller m)."""
    if folds is None:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(y))
        blocks = np.array_split(perm, 5)
        folds = [(np.setdiff1d(perm, b), b) for b in blocks]
    best_m, best_err = None, np.inf
    for m in candidates:
        err = 0.0
        for tr, va in folds:
            f = RegressionForest(n_trees=n_trees, max_features=m, min_leaf=min_leaf, seed=seed)
            f.fit(X[tr], y[tr])
            err += float(np.mean((f.predict(X[va]) - y[va]) ** 2))
        err /= len(folds)
        if err < best_err - 1e-12:
            best_m, best_err = m, err
    return best_m


class ForestForecaster(Forecaster):
    """One regression forest per cell on the calendar + neighbour features.

    ``m=None`` selects the per-split feature count by 5-fold cross
    validation over {2,4,5} inside the training set, with folds built from
    contiguous day blocks.
    """

    method = "RF"

    def __init__(self, grid: Grid, m: int | None = None, n_trees: int = 500,
                 min_leaf: int = 5, seed: int = 0, cv_trees: int = 50,
                 cv_blocks: str = "days"):
        self.grid = grid
        self.m = m
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.seed = seed
        self.cv_trees = cv_trees
        if cv_blocks not in ("days", "random"):
            raise ValueError("cv_blocks must be 'days' or 'random'")
        self.cv_blocks = cv_blocks

    def fit(self, train: EventPanel) -> "ForestForecaster":
        table = build_feature_table(train, self.grid, min_total=None)
        if len(table) < 50:
            raise ValueError("need at least 50 training rows")
        X, self.feature_names_ = design_matrix(table)
        y = table["target"].to_numpy(dtype=float)
        self.models_ = {}
        self.m_used_ = {}
        for key, sub in table.groupby(["row", "col"], sort=True):
            rows = sub.index.to_numpy()
            Xc, yc = X[rows], y[rows]
            m = self.m
            if m is None:
                folds = (contiguous_day_folds(sub["date"], 5)
                         if self.cv_blocks == "days" else None)
                m = select_max_features(
                    Xc, yc, folds=folds, n_trees=self.cv_trees,
                    min_leaf=self.min_leaf, seed=self.seed,
                )
            forest = RegressionForest(
                n_trees=self.n_trees, max_features=m, min_leaf=self.min_leaf, seed=self.seed
            )
            self.models_[key] = forest.fit(Xc, yc)
            self.m_used_[key] = m
        return self

    def predict_panel(self, test: EventPanel) -> np.ndarray:
        table = build_feature_table(test, self.grid, min_total=None)
        X, _ = design_matrix(table)
        pred = np.zeros_like(test.values, dtype=float)
        bins = test.bins_per_day
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
