"""Per-cell event series, forecasting feature table, PoI entropy, census overlay."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from datetime import date, timedelta

import numpy as np
import pandas as pd
import shapely
from scipy import stats
from shapely.geometry import Polygon

from .geo import OperationArea
from .grid import CellId, Grid, locate_many, neighbors

logger = logging.getLogger(__name__)


@dataclass
class EventPanel:
    """Binned event counts for every active cell on one shared calendar."""

    cells: list[CellId]
    dates: list[date]  # consecutive days
    bin_minutes: int
    kind: str  # "pickup" | "dropoff"
    values: np.ndarray  # (n_cells, n_days, bins_per_day)

    def __post_init__(self):
        self._index = {tuple(c): i for i, c in enumerate(self.cells)}

    @property
    def bins_per_day(self) -> int:
        return 1440 // self.bin_minutes

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def weekday_mask(self) -> np.ndarray:
        return np.array([d.weekday() < 5 for d in self.dates])

    def cell_index(self, cell) -> int:
        return self._index[tuple(cell)]

    def series(self, cell) -> np.ndarray:
        return self.values[self.cell_index(cell)]

    def slice_days(self, lo: int, hi: int) -> "EventPanel":
        return replace(self, dates=self.dates[lo:hi], values=self.values[:, lo:hi, :])

    def total_by_cell(self) -> np.ndarray:
        return self.values.sum(axis=(1, 2))


def bin_events(
    trips,
    grid: Grid,
    bin_minutes: int = 60,
    kind: str = "pickup",
    dates: tuple[date, date] | None = None,
) -> EventPanel:
    """Bin trip starts (pickups) or ends (drop-offs) per active cell.

    Every trip of the chosen kind is counted exactly once; empty bins are
    explicit zeros.  ``dates`` optionally pins the calendar (inclusive
    first/last day); by default it spans the observed event times.
    """
    if 1440 % bin_minutes != 0:
        raise ValueError(f"bin_minutes={bin_minutes} does not divide 1440")
    if kind == "pickup":
        times = pd.to_datetime(trips.frame["start_time"])
        lon, lat = trips.frame["origin_lon"], trips.frame["origin_lat"]
    elif kind == "dropoff":
        times = pd.to_datetime(trips.frame["end_time"])
        lon, lat = trips.frame["dest_lon"], trips.frame["dest_lat"]
    else:
        raise ValueError(f"unknown event kind {kind!r}")

    cells = grid.active_cells
    index = {tuple(c): i for i, c in enumerate(cells)}

    if len(times):
        first = times.dt.date.min() if dates is None else dates[0]
        last = times.dt.date.max() if dates is None else dates[1]
    elif dates is not None:
        first, last = dates
    else:
        raise ValueError("empty trip set requires an explicit date range")
    day_list = [first + timedelta(days=i) for i in range((last - first).days + 1)]
    values = np.zeros((len(cells), len(day_list), 1440 // bin_minutes))

    if len(times):
        rows, cols = locate_many(grid, lon.to_numpy(), lat.to_numpy())
        cell_idx = np.array([index.get((r, c), -1) for r, c in zip(rows, cols)])
        if (cell_idx < 0).any():
            n = int((cell_idx < 0).sum())
            raise ValueError(f"{n} events fall outside the grid's active cells")
        day_idx = np.array([(d - first).days for d in times.dt.date])
        if (day_idx < 0).any() or (day_idx >= len(day_list)).any():
            raise ValueError("events outside the requested date range")
        bin_idx = (times.dt.hour * 60 + times.dt.minute).to_numpy() // bin_minutes
        np.add.at(values, (cell_idx, day_idx, bin_idx), 1.0)

    return EventPanel(cells=cells, dates=day_list, bin_minutes=bin_minutes, kind=kind, values=values)


def neighbor_average(panel: EventPanel, grid: Grid, hops: int = 2) -> np.ndarray:
    """Mean event count over each cell's active <=hops-neighbours, per (day, bin).

    Cells without active neighbours get 0, the no-information prior.
    """
    out = np.zeros_like(panel.values)
    for i, cell in enumerate(panel.cells):
        nbrs = [panel.cell_index(n) for n in neighbors(grid, cell, hops)]
        if nbrs:
            out[i] = panel.values[nbrs].mean(axis=0)
    return out


def eligible_cells(panel: EventPanel, companion: EventPanel | None = None,
                   min_total: int | None = 30):
    """Cells with more than ``min_total`` events over the whole period.

    The threshold counts pickups and drop-offs together when a companion
    panel is supplied; ``min_total=None`` keeps every cell.
    """
    if min_total is None:
        return list(panel.cells)
    totals = panel.total_by_cell()
    if companion is not None:
        totals = totals + companion.total_by_cell()
    return [c for c, t in zip(panel.cells, totals) if t > min_total]


def build_feature_table(
    panel: EventPanel,
    grid: Grid,
    companion: EventPanel | None = None,
    min_total: int = 30,
    hops: int = 2,
) -> pd.DataFrame:
    """One row per (cell, day, bin) with calendar features and the target.

    Columns: row, col, date, bin, day_of_week (0=Mon..6=Sun), is_weekday,
    neighbor_avg, target.  Cells at or below the event threshold are
    excluded entirely.
    """
    keep = eligible_cells(panel, companion, min_total)
    nb = neighbor_average(panel, grid, hops)
    frames = []
    n_days, bins = panel.n_days, panel.bins_per_day
    dows = np.array([d.weekday() for d in panel.dates])
    day_grid = np.repeat(np.arange(n_days), bins)
    bin_grid = np.tile(np.arange(bins), n_days)
    for cell in keep:
        i = panel.cell_index(cell)
        frames.append(
            pd.DataFrame(
                {
                    "row": cell.row,
                    "col": cell.col,
                    "date": [panel.dates[d] for d in day_grid],
                    "bin": bin_grid,
                    "day_of_week": dows[day_grid],
                    "is_weekday": dows[day_grid] < 5,
                    "neighbor_avg": nb[i].ravel(),
                    "target": panel.values[i].ravel(),
                }
            )
        )
    if not frames:
        return pd.DataFrame(
            columns=["row", "col", "date", "bin", "day_of_week", "is_weekday", "neighbor_avg", "target"]
        )
    return pd.concat(frames, ignore_index=True)


def venue_entropy(counts) -> float:
    """Shannon entropy (natural log) of PoI category proportions.

    Zero counts contribute nothing; an empty profile has entropy 0 by
    convention.
    """
    c = np.asarray(list(counts), dtype=float)
    if (c < 0).any():
        raise ValueError("category counts must be non-negative")
    n = c.sum()
    if n == 0:
        return 0.0
    p = c[c > 0] / n
    return float(-(p * np.log(p)).sum())


def poi_profiles(poi_table: pd.DataFrame, exclude: tuple = ("Event",)) -> pd.DataFrame:
    """Aggregate a PoI listing (area_id, category, count) into per-area profiles.

    Event-category venues are dropped: they rarely overlap an observation
    window.  Returns one row per area with per-category counts, the total
    and the venue entropy.
    """
    df = poi_table[~poi_table["category"].isin(exclude)]
    pivot = (
        df.pivot_table(index="area_id", columns="category", values="count", aggfunc="sum")
        .fillna(0.0)
        .sort_index()
    )
    out = pivot.copy()
    out["n_pois"] = pivot.sum(axis=1)
    out["entropy"] = [venue_entropy(r) for r in pivot.to_numpy()]
    return out.reset_index()


def census_overlay(
    units,
    area: OperationArea,
    trips,
    min_overlap: float = 0.20,
    indicators: list[str] | None = None,
    skew_threshold: float = 2.0,
) -> tuple[pd.DataFrame, list[str]]:
    """Clip census units to the operation area and attach pickup counts.

    ``units`` is a GeoJSON FeatureCollection (dict) or a list of features
    with Polygon geometries and numeric indicator properties.  Units
    overlapping the area by less than ``min_overlap`` are discarded;
    retained indicators are rescaled by the overlap fraction.  Returns the
    unit table plus the list of indicators whose rescaled distribution has
    sample skewness above ``skew_threshold`` (log-transform candidates).
    """
    if isinstance(units, dict):
        units = units["features"]
    proj = area.projection
    area_poly = Polygon(area.ring_xy).buffer(0)

    px, py = proj.to_xy(trips.frame["origin_lon"].to_numpy(), trips.frame["origin_lat"].to_numpy())

    rows = []
    n_discard_overlap = 0
    for k, feat in enumerate(units):
        geom = feat["geometry"]
        if geom["type"] != "Polygon":
            raise ValueError(f"census unit {k}: expected Polygon, got {geom['type']}")
        ring = np.asarray(geom["coordinates"][0], dtype=float)
        x, y = proj.to_xy(ring[:, 0], ring[:, 1])
        poly = Polygon(np.column_stack([x, y])).buffer(0)
        if poly.area <= 0:
            raise ValueError(f"census unit {k}: degenerate polygon")
        inter = poly.intersection(area_poly)
        frac = inter.area / poly.area
        if frac < min_overlap:
            n_discard_overlap += 1
            continue
        props = feat.get("properties", {})
        keys = indicators or [p for p, v in props.items() if isinstance(v, (int, float))]
        row = {"unit_id": props.get("unit_id", k), "overlap_frac": frac}
        for key in keys:
            row[key] = float(props[key]) * frac
        if len(px):
            row["pickups"] = int(shapely.contains_xy(inter, px, py).sum())
        else:
            row["pickups"] = 0
        rows.append(row)

    if not rows:
        raise RuntimeError(
            f"no census unit overlaps the operation area by >= {min_overlap:.0%} "
            f"({n_discard_overlap} discarded): wrong projection or wrong files?"
        )
    table = pd.DataFrame(rows)
    logger.info("census_overlay: kept %d units, discarded %d", len(table), n_discard_overlap)

    log_flags = []
    for key in table.columns:
        if key in ("unit_id", "overlap_frac", "pickups"):
            continue
        col = table[key].to_numpy(dtype=float)
        if len(col) > 2 and np.std(col) > 0 and stats.skew(col) > skew_threshold:
            log_flags.append(key)
    return table, log_flags
