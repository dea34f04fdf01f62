"""Availability-profile clustering: DTW distances, PAM, silhouette, labels.

Each cell's day is summarised as 144 ten-minute bins of distinct vehicles
present, averaged over days and normalised by the cell's own mean, so the
profiles compare shapes rather than magnitudes.  Profiles are clustered on
their banded-DTW distances with PAM; the cluster count maximises the mean
silhouette; clusters are labelled day / night / neutral / high-intensity
from their mean profile's peak position and peak-trough range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .grid import CellId, Grid, locate_many
from .ingest import SnapshotSet

logger = logging.getLogger(__name__)

LABELS = ("day", "night", "neutral", "high-intensity")


def availability_profiles(
    snapshots: SnapshotSet, grid: Grid, bin_minutes: int = 10
) -> tuple[np.ndarray, list[CellId]]:
    """Normalised mean-day availability per cell.

    Availability in a bin is the count of distinct vehicles seen parked in
    the cell during that bin; the per-cell series is averaged across days
    and divided by the cell's overall mean.  Cells that never host a
    vehicle are excluded.
    """
    if 1440 % bin_minutes != 0:
        raise ValueError("bin_minutes must divide 1440")
    df = snapshots.frame
    rows, cols = locate_many(grid, df["lon"].to_numpy(), df["lat"].to_numpy())
    ts = df["timestamp"]
    tab = pd.DataFrame(
        {
            "row": rows,
            "col": cols,
            "vin": df["vin"].to_numpy(),
            "date": ts.dt.date.to_numpy(),
            "bin": (ts.dt.hour * 60 + ts.dt.minute).to_numpy() // bin_minutes,
        }
    )
    tab = tab[tab["row"] >= 0]
    counts = (
        tab.drop_duplicates(["row", "col", "vin", "date", "bin"])
        .groupby(["row", "col", "date", "bin"])
        .size()
    )
    n_days = tab["date"].nunique()
    bins = 1440 // bin_minutes
    by_cell = counts.groupby(level=["row", "col"])

    profiles, cells = [], []
    for (r, c), sub in by_cell:
        series = np.zeros(bins)
        sub2 = sub.droplevel(["row", "col"])
        for (_, b), v in sub2.items():
            series[b] += v
        series /= n_days  # mean over days, absent days count as zero
        mean = series.mean()
        if mean <= 0:
            continue
        profiles.append(series / mean)
        cells.append(CellId(int(r), int(c)))
    return np.array(profiles), cells


def dtw_distance(a: np.ndarray, b: np.ndarray, band: int) -> float:
    """Banded dynamic time warping with squared-difference local cost.

    The Sakoe-Chiba constraint keeps the warping path within ``band`` bins
    of the diagonal; the step pattern is the symmetric diagonal/up/left.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b):
        raise ValueError("profiles must have equal length")
    if band < 0:
        raise ValueError("band must be >= 0")
    n = len(a)
    band = min(band, n - 1)
    inf = np.inf
    prev = np.full(n, inf)
    cur = np.full(n, inf)
    for i in range(n):
        lo = max(0, i - band)
        hi = min(n - 1, i + band)
        cur[:] = inf
        cost = (a[i] - b[lo:hi + 1]) ** 2
        if i == 0:
            cur[lo] = cost[0]
            for j in range(lo + 1, hi + 1):
                cur[j] = cur[j - 1] + cost[j - lo]
        else:
            seg = np.full(hi - lo + 1, inf)
            diag = prev[lo - 1:hi] if lo >= 1 else np.concatenate([[inf], prev[lo:hi]])
            up = prev[lo:hi + 1]
            best = np.minimum(np.concatenate([diag, [inf]])[: hi - lo + 1], up)
            # left neighbour folds in sequentially
            run = inf
            for j in range(hi - lo + 1):
                run = min(best[j], run)
                run = run + cost[j]
                seg[j] = run
            cur[lo:hi + 1] = seg
        prev, cur = cur, prev
    return float(prev[n - 1])


def dtw_matrix(profiles: np.ndarray, band: int) -> np.ndarray:
    n = len(profiles)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = dtw_distance(profiles[i], profiles[j], band)
    return D


def pam_cluster(D: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, list[int]]:
    """Partition around medoids on a precomputed dissimilarity matrix.

    Greedy BUILD then best-improvement SWAP until no swap lowers the total
    medoid distance.  BUILD makes the result independent of ``seed``; the
    argument stays for interface uniformity with the other clusterers.
    """
    D = np.asarray(D, dtype=float)
    n = len(D)
    if k > n:
        raise ValueError(f"k={k} exceeds {n} points")
    if not np.allclose(D, D.T) or np.abs(np.diag(D)).max() > 1e-12:
        raise ValueError("need a symmetric dissimilarity matrix with zero diagonal")

    # BUILD: first medoid minimises total distance, then greedy additions
    medoids = [int(np.argmin(D.sum(axis=1)))]
    nearest = D[medoids[0]].copy()
    while len(medoids) < k:
        gains = np.minimum(D, nearest[None, :]).sum(axis=1)
        gains[medoids] = np.inf
        new = int(np.argmin(gains))
        medoids.append(new)
        nearest = np.minimum(nearest, D[new])

    def cost_of(meds):
        return float(D[meds].min(axis=0).sum())

    current = cost_of(medoids)
    improved = True
    while improved:
        improved = False
        best_swap, best_cost = None, current
        for mi, m in enumerate(medoids):
            for h in range(n):
                if h in medoids:
                    continue
                trial = medoids.copy()
                trial[mi] = h
                c = cost_of(trial)
                if c < best_cost - 1e-12:
                    best_swap, best_cost = (mi, h), c
        if best_swap is not None:
            medoids[best_swap[0]] = best_swap[1]
            current = best_cost
            improved = True

    medoids = sorted(medoids)
    assignment = np.argmin(D[medoids], axis=0)
    return assignment, medoids


def silhouette_mean(D: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette from a dissimilarity matrix; singletons score 0."""
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    n = len(labels)
    s = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            s[i] = 0.0
            continue
        a = D[i, own].sum() / (n_own - 1)
        b = min(D[i, labels == g].mean() for g in uniq if g != labels[i])
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(s.mean())


def select_k(D: np.ndarray, k_range=range(2, 9), seed: int = 0) -> tuple[int, dict]:
    """Cluster count with the highest mean silhouette under PAM."""
    n = len(D)
    if n < 3:
        raise ValueError("need at least 3 profiles to choose k")
    if np.allclose(D, 0.0):
        logger.warning("select_k: all profiles identical, reporting k=1")
        return 1, {}
    scores = {}
    for k in k_range:
        if k >= n:
            continue
        labels, _ = pam_cluster(D, k, seed)
        if len(np.unique(labels)) < 2:
            continue
        scores[k] = silhouette_mean(D, labels)
    if not scores:
        logger.warning("select_k: no valid clustering in range, reporting k=1")
        return 1, {}
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


@dataclass
class ClusterResult:
    k: int
    assignment: np.ndarray  # profile index -> cluster id
    medoids: list[int]
    cells: list[CellId]
    silhouette_by_k: dict
    cluster_labels: dict = field(default_factory=dict)  # cluster id -> label

    def labelled_cells(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "row": [c.row for c in self.cells],
                "col": [c.col for c in self.cells],
                "cluster": self.assignment,
                "label": [self.cluster_labels.get(g, "") for g in self.assignment],
            }
        )


def cluster_profiles(
    profiles: np.ndarray,
    cells: list[CellId],
    band: int = 12,
    k_range=range(2, 9),
    seed: int = 0,
) -> ClusterResult:
    D = dtw_matrix(profiles, band)
    k, scores = select_k(D, k_range, seed)
    if k == 1:
        assignment = np.zeros(len(profiles), dtype=int)
        medoids = [0] if len(profiles) else []
    else:
        assignment, medoids = pam_cluster(D, k, seed)
    result = ClusterResult(
        k=k, assignment=assignment, medoids=medoids, cells=cells, silhouette_by_k=scores
    )
    result.cluster_labels = label_clusters(result, profiles)
    return result


def label_clusters(
    result: ClusterResult,
    profiles: np.ndarray,
    bin_minutes: int = 10,
    high_intensity_factor: float = 3.0,
    neutral_range: float = 0.2,
    day_window: tuple = (9, 17),
    night_window: tuple = (21, 6),
) -> dict:
    """Assign day / night / neutral / high-intensity labels to clusters.

    Precedence: a cluster whose peak-trough range exceeds
    ``high_intensity_factor`` times the median range of the other clusters
    is high-intensity; flat clusters (range below ``neutral_range``) are
    neutral; otherwise the peak hour decides day vs night, anything
    ambiguous stays neutral.  Duplicate day/night/high-intensity labels are
    resolved towards the stronger cluster, the rest demoted to neutral.
    """
    groups = [int(g) for g in np.unique(result.assignment)]
    mean_profiles = {g: profiles[result.assignment == g].mean(axis=0) for g in groups}
    ranges = {g: float(np.ptp(mean_profiles[g])) for g in groups}
    labels: dict[int, str] = {}
    for g in groups:
        others = [ranges[h] for h in groups if h != g]
        if others and ranges[g] > high_intensity_factor * float(np.median(others)):
            labels[g] = "high-intensity"
            continue
        if ranges[g] < neutral_range:
            labels[g] = "neutral"
            continue
        peak_hour = (int(np.argmax(mean_profiles[g])) * bin_minutes) / 60.0
        if day_window[0] <= peak_hour < day_window[1]:
            labels[g] = "day"
        elif peak_hour >= night_window[0] or peak_hour < night_window[1]:
            labels[g] = "night"
        else:
            labels[g] = "neutral"
    for name in ("day", "night", "high-intensity"):
        holders = [g for g, l in labels.items() if l == name]
        if len(holders) > 1:
            holders.sort(key=lambda g: ranges[g], reverse=True)
            for g in holders[1:]:
                labels[g] = "neutral"
    return labels
