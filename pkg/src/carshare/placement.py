"""Maintenance-facility placement from distinct-vehicle cell coverage.

A cell qualifies as a service site when, inside some tolerance window of W
days, it sees enough distinct vehicles parked: a workshop there could reach
that share of the fleet without extra relocation trips.  Coverage uses the
best (maximum) sliding W-day window, the operator-optimistic reading;
``first_window=True`` switches to the opening window only.
"""

from __future__ import annotations

import logging
from collections import Counter
from datetime import timedelta

import numpy as np
import pandas as pd

from .grid import Grid, locate_many
from .ingest import SnapshotSet, TripSet

logger = logging.getLogger(__name__)


def _presence_pairs(source, grid: Grid) -> pd.DataFrame:
    """(row, col, vin, date) presence records, deduplicated."""
    if isinstance(source, SnapshotSet):
        df = source.frame
        rows, cols = locate_many(grid, df["lon"].to_numpy(), df["lat"].to_numpy())
        tab = pd.DataFrame(
            {
                "row": rows,
                "col": cols,
                "vin": df["vin"].to_numpy(),
                "date": df["timestamp"].dt.date.to_numpy(),
            }
        )
    elif isinstance(source, TripSet):
        df = source.frame
        parts = []
        for lon, lat, t in (("origin_lon", "origin_lat", "start_time"),
                            ("dest_lon", "dest_lat", "end_time")):
            rows, cols = locate_many(grid, df[lon].to_numpy(), df[lat].to_numpy())
            parts.append(pd.DataFrame(
                {
                    "row": rows,
                    "col": cols,
                    "vin": df["vin"].to_numpy(),
                    "date": pd.to_datetime(df[t]).dt.date.to_numpy(),
                }
            ))
        tab = pd.concat(parts, ignore_index=True)
    else:
        raise TypeError("coverage expects a SnapshotSet (parked presence) or TripSet")
    tab = tab[tab["row"] >= 0]
    return tab.drop_duplicates(["row", "col", "vin", "date"])


def coverage(
    source,
    grid: Grid,
    window_days: int,
    fleet_size: int | None = None,
    first_window: bool = False,
) -> pd.DataFrame:
    """Distinct vehicles seen per cell within the best W-day window.

    Returns one row per active cell: distinct_vehicles, fleet_fraction and
    a dense rank (1 = best), ties broken by (row, col).
    """
    if window_days <= 0:
        raise ValueError("window_days must be positive")
    pairs = _presence_pairs(source, grid)
    if pairs.empty:
        raise ValueError("no presence records inside the grid")
    first = pairs["date"].min()
    last = pairs["date"].max()
    n_days = (last - first).days + 1
    if window_days > n_days:
        raise ValueError(
            f"window of {window_days} days exceeds the {n_days}-day observation period"
        )
    if fleet_size is None:
        fleet_size = int(pairs["vin"].nunique())

    day_idx = np.array([(d - first).days for d in pairs["date"]])
    pairs = pairs.assign(day=day_idx)
    n_windows = 1 if first_window else n_days - window_days + 1

    best: dict[tuple, int] = {}
    for key, sub in pairs.groupby(["row", "col"], sort=True):
        by_day: dict[int, list] = {}
        for d, v in zip(sub["day"].to_numpy(), sub["vin"].to_numpy()):
            by_day.setdefault(int(d), []).append(v)
        counter: Counter = Counter()
        for d in range(window_days):
            counter.update(by_day.get(d, ()))
        top = len(counter)
        for start in range(1, n_windows):
            for v in by_day.get(start - 1, ()):
                counter[v] -= 1
                if counter[v] == 0:
                    del counter[v]
            counter.update(by_day.get(start + window_days - 1, ()))
            top = max(top, len(counter))
        best[key] = top

    cells = grid.active_cells
    out = pd.DataFrame(
        {
            "row": [c.row for c in cells],
            "col": [c.col for c in cells],
            "distinct_vehicles": [best.get(tuple(c), 0) for c in cells],
        }
    )
    out["fleet_fraction"] = out["distinct_vehicles"] / fleet_size
    out = out.sort_values(
        ["distinct_vehicles", "row", "col"], ascending=[False, True, True], kind="stable"
    ).reset_index(drop=True)
    out["rank"] = np.arange(1, len(out) + 1)
    return out


def select_sites(table: pd.DataFrame, threshold: float = 0.50, top_k: int = 3) -> pd.DataFrame:
    """Cells whose coverage reaches the fleet-share threshold, best first."""
    qualifying = table[table["fleet_fraction"] >= threshold]
    qualifying = qualifying.sort_values(
        ["fleet_fraction", "row", "col"], ascending=[False, True, True], kind="stable"
    )
    return qualifying.head(top_k).reset_index(drop=True)
