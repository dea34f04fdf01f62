"""Timeslot-regime forecaster after Weikl & Bogenberger's relocation scheme.

Training: for every timeslot, each day becomes a vector of per-cell event
counts; days are projected onto the first two principal components,
grouped by k-means (k from the gap statistic, which may pick a single
group), and a from-to matrix captures how days move between groups of
consecutive timeslots.  Prediction matches the previous timeslot's observed
city-wide demand to its nearest group centroid and adds that group's
expected per-cell variation.
"""

from __future__ import annotations

import numpy as np

from ..features import EventPanel
from .base import Forecaster


def _plusplus_seed(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding."""
    n = len(pts)
    centroids = [pts[int(rng.integers(n))]]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids.append(pts[int(rng.integers(n))])
            continue
        i = int(rng.choice(n, p=d2 / total))
        centroids.append(pts[i])
        d2 = np.minimum(d2, ((pts - pts[i]) ** 2).sum(axis=1))
    return np.array(centroids)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 3,
           max_iter: int = 100):
    """Lloyd's algorithm with k-means++ restarts; returns (labels, centroids, inertia)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if k <= 0 or k > n:
        raise ValueError(f"k={k} out of range for {n} points")
    best = None
    for _ in range(n_init):
        centroids = _plusplus_seed(pts, k, rng)
        for _ in range(max_iter):
            d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            new = centroids.copy()
            for j in range(k):
                mask = labels == j
                if mask.any():
                    new[j] = pts[mask].mean(axis=0)
            if np.allclose(new, centroids):
                break
            centroids = new
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), labels].sum())
        if best is None or inertia < best[2] - 1e-12:
            best = (labels, centroids, inertia)
    return best


def gap_statistic(points: np.ndarray, k_max: int = 8, n_refs: int = 50,
                  rng: np.random.Generator | None = None):
    """Optimal k by the gap statistic with uniform bounding-box references.

    Applies the first-local-optimum rule (smallest k with
    gap(k) >= gap(k+1) - s(k+1)), scanning k incrementally so the usual
    small answers stay cheap.  Handles the single-group case (k=1).
    """
    rng = rng or np.random.default_rng(0)
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    k_max = min(k_max, n)
    if n < 2 or np.allclose(pts, pts[0]):
        return 1, {}
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def log_wk(data, k, inits):
        if k == 1:
            mu = data.mean(axis=0)
            w = float(((data - mu) ** 2).sum())
        else:
            w = kmeans(data, k, rng, n_init=inits)[2]
        return np.log(max(w, 1e-12))

    ref_sets = [lo + rng.uniform(0.0, 1.0, pts.shape) * span for _ in range(n_refs)]
    gaps, sks = [], []
    for k in range(1, k_max + 1):
        ref_logs = np.array([log_wk(refs, k, 1) for refs in ref_sets])
        gaps.append(ref_logs.mean() - log_wk(pts, k, 3))
        sks.append(ref_logs.std(ddof=0) * np.sqrt(1.0 + 1.0 / n_refs))
        if k >= 2 and gaps[-2] >= gaps[-1] - sks[-1]:
            return k - 1, {"gap": gaps, "sk": sks}
    return k_max, {"gap": gaps, "sk": sks}


class _SlotModel:
    __slots__ = ("mean", "components", "centroids", "labels", "group_demand", "k")


class WeiklForecaster(Forecaster):
    """City-global regime forecaster; see module docstring."""

    method = "WEIKL"

    def __init__(self, seed: int = 0, k_max: int = 8, n_refs: int = 50):
        self.seed = seed
        self.k_max = k_max
        self.n_refs = n_refs

    def fit(self, train: EventPanel) -> "WeiklForecaster":
        if train.n_days < 2:
            raise ValueError("WEIKL needs at least 2 training days")
        rng = np.random.default_rng(self.seed)
        values = train.values  # (C, D, B)
        n_cells, n_days, bins = values.shape
        self.bins = bins
        self.slots: list[_SlotModel] = []
        assignments = np.zeros((bins, n_days), dtype=int)

        for t in range(bins):
            M = values[:, :, t].T  # days x cells
            slot = _SlotModel()
            mean = M.mean(axis=0)
            centered = M - mean
            if np.allclose(centered, 0.0):
                comps = np.zeros((2, n_cells))
                Z = np.zeros((n_days, 2))
            else:
                _, _, vt = np.linalg.svd(centered, full_matrices=False)
                comps = vt[:2]
                if len(comps) < 2:
                    comps = np.vstack([comps, np.zeros(n_cells)])
                Z = centered @ comps.T
            k, _ = gap_statistic(Z, self.k_max, self.n_refs, rng)
            if k == 1:
                labels = np.zeros(n_days, dtype=int)
                centroids = Z.mean(axis=0, keepdims=True)
            else:
                labels, centroids, _ = kmeans(Z, k, rng)
                # drop empty groups so the from-to matrix rows stay stochastic
                present = np.unique(labels)
                remap = {g: i for i, g in enumerate(present)}
                labels = np.array([remap[g] for g in labels])
                centroids = centroids[present]
                k = len(present)
            slot.mean = mean
            slot.components = comps
            slot.centroids = centroids
            slot.labels = labels
            slot.k = k
            slot.group_demand = np.stack(
                [M[labels == g].mean(axis=0) for g in range(k)]
            )  # (k, C)
            self.slots.append(slot)
            assignments[t] = labels

        # from-to transition probabilities between consecutive timeslots,
        # wrapping the last slot of a day onto the next day's first slot
        self.from_to: list[np.ndarray] = []
        for t in range(bins):
            src = self.slots[t]
            dst = self.slots[(t + 1) % bins]
            F = np.zeros((src.k, dst.k))
            for d in range(n_days):
                d2 = d if t + 1 < bins else d + 1
                if d2 >= n_days:
                    continue
                F[assignments[t, d], assignments[(t + 1) % bins, d2]] += 1.0
            rows = F.sum(axis=1, keepdims=True)
            uniform = np.full_like(F, 1.0 / dst.k)
            F = np.where(rows > 0, F / np.where(rows == 0, 1.0, rows), uniform)
            self.from_to.append(F)

        # expected per-cell demand variation for a group at slot t:
        # from-to-weighted mean demand of the next slot minus the group's own
        self.variation: list[np.ndarray] = []
        for t in range(bins):
            dst = self.slots[(t + 1) % bins]
            nxt = self.from_to[t] @ dst.group_demand  # (k_src, C)
            self.variation.append(nxt - self.slots[t].group_demand)

        self._last_train = values[:, -1, :]  # (C, B)
        return self

    def _match_group(self, t: int, demand: np.ndarray) -> int:
        slot = self.slots[t]
        z = (demand - slot.mean) @ slot.components.T
        d2 = ((slot.centroids - z) ** 2).sum(axis=1)
        return int(d2.argmin())

    def predict_panel(self, test: EventPanel) -> np.ndarray:
        values = test.values
        n_cells, n_days, bins = values.shape
        if bins != self.bins:
            raise ValueError("test panel bin length differs from training")
        pred = np.empty_like(values, dtype=float)
        prev = self._last_train[:, -1]  # last training timeslot's demand
        prev_t = bins - 1
        for d in range(n_days):
            for t in range(bins):
                g = self._match_group(prev_t, prev)
                pred[:, d, t] = np.maximum(prev + self.variation[prev_t][g], 0.0)
                prev = values[:, d, t]  # observed, available at the next step
                prev_t = t
        return self._finalize(pred)
