"""Synthetic cities with known ground truth.

Every analysis stage gets an oracle from here: trips with exact endpoints
and times, Poisson demand with known rates, planted usage classes laid out
in spatial patches, an optional airport hub, and a weekday/weekend regime.
Vehicle availability is rendered as 1-minute snapshots in which a car
simply vanishes for the duration of each trip, matching the inference
assumption used on real feeds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np
import pandas as pd

from .features import EventPanel
from .geo import OperationArea
from .grid import CellId, Grid, build_grid, rect_area
from .ingest import SnapshotSet, TripSet

logger = logging.getLogger(__name__)

CLASSES = ("day", "night", "neutral")

# hourly pickup-rate shape per cell class, mean ~1; residential cells shed
# cars in the morning, business cells in the evening
_PICKUP_SHAPE = {
    "night": np.array([0.2, 0.1, 0.1, 0.1, 0.2, 0.5, 1.5, 3.0, 3.0, 2.0,
                       1.2, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.2, 1.0, 0.8,
                       0.8, 0.8, 0.5, 0.3]),
    "day": np.array([0.3, 0.2, 0.1, 0.1, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0,
                     1.0, 1.2, 1.4, 1.2, 1.2, 1.5, 2.5, 3.0, 2.5, 1.8,
                     1.2, 0.8, 0.5, 0.4]),
    "neutral": np.ones(24),
    "airport": np.array([0.5, 0.3, 0.3, 0.3, 0.5, 1.0, 1.5, 1.5, 1.5, 1.5,
                         1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 1.5,
                         1.2, 1.0, 0.8, 0.5]),
}


@dataclass
class CityScenario:
    n_rows: int = 6
    n_cols: int = 6
    cell_side_m: float = 500.0
    fleet_size: int = 100
    n_days: int = 10
    start: date = date(2015, 5, 18)  # a Monday
    seed: int = 0
    base_rate_per_hour: float = 0.8  # fleet-average pickups/hour/cell before shaping
    rate_spread: float = 0.4  # lognormal sigma of per-cell multipliers
    weekday_weekend_ratio: float = 1.0
    class_mix: tuple = (0.35, 0.35, 0.30)  # day / night / neutral patch shares
    airport: bool = False
    airport_rate_boost: float = 6.0
    airport_dest_share: float = 0.08  # probability a trip heads to the airport
    trip_minutes: tuple = (15.0, 40.0)
    min_dwell_minutes: float = 3.0
    same_class_dest_bias: float = 0.6
    commute_flows: bool = True  # morning night->day, evening day->night
    lon_c: float = 9.19
    lat_c: float = 45.46


@dataclass
class SynthResult:
    scenario: CityScenario
    area: OperationArea
    grid: Grid
    snapshots: SnapshotSet
    trips: TripSet  # ground truth
    labels: dict  # CellId -> class
    calendar: pd.DataFrame  # date, is_weekday
    rates: np.ndarray  # (n_cells, n_days, 24) planted hourly pickup rates
    thinned: int = 0


def _patch_labels(sc: CityScenario, rng: np.random.Generator) -> dict:
    """Assign classes in contiguous patches (region growing from seeds)."""
    cells = [(r, c) for r in range(sc.n_rows) for c in range(sc.n_cols)]
    n = len(cells)
    quota = {
        "day": int(round(sc.class_mix[0] * n)),
        "night": int(round(sc.class_mix[1] * n)),
    }
    quota["neutral"] = n - quota["day"] - quota["night"]
    labels: dict[tuple, str] = {}
    frontier: dict[str, list] = {}
    order = list(quota)
    seeds = rng.choice(n, size=len(order), replace=False)
    for cls, s in zip(order, seeds):
        labels[cells[s]] = cls
        frontier[cls] = [cells[s]]
        quota[cls] -= 1
    while len(labels) < n:
        progressed = False
        for cls in order:
            if quota[cls] <= 0 or not frontier[cls]:
                continue
            i = int(rng.integers(len(frontier[cls])))
            r, c = frontier[cls][i]
            cands = [
                (r + dr, c + dc)
                for dr in (-1, 0, 1)
                for dc in (-1, 0, 1)
                if (r + dr, c + dc) not in labels
                and 0 <= r + dr < sc.n_rows
                and 0 <= c + dc < sc.n_cols
            ]
            if not cands:
                frontier[cls].pop(i)
                continue
            pick = cands[int(rng.integers(len(cands)))]
            labels[pick] = cls
            frontier[cls].append(pick)
            quota[cls] -= 1
            progressed = True
        if not progressed:
            # quotas exhausted or frontiers stuck: fill leftovers as neutral
            for cell in cells:
                labels.setdefault(cell, "neutral")
    out = {CellId(r, c): labels[(r, c)] for r, c in cells}
    if sc.airport:
        out[CellId(sc.n_rows - 1, sc.n_cols - 1)] = "airport"
    return out


def demand_rates(sc: CityScenario, labels: dict, rng: np.random.Generator) -> np.ndarray:
    """Planted hourly pickup rates, shape (n_cells, n_days, 24)."""
    cells = sorted(labels)
    mult = np.exp(rng.normal(0.0, sc.rate_spread, len(cells)))
    shapes = np.stack([_PICKUP_SHAPE[labels[c]] for c in cells])
    boost = np.array([sc.airport_rate_boost if labels[c] == "airport" else 1.0 for c in cells])
    daily = sc.base_rate_per_hour * mult[:, None] * boost[:, None] * shapes
    wk = np.array(
        [
            sc.weekday_weekend_ratio if (sc.start + timedelta(days=d)).weekday() < 5 else 1.0
            for d in range(sc.n_days)
        ]
    )
    return daily[:, None, :] * wk[None, :, None]


def _cell_point(grid: Grid, cell, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform point well inside a cell (10% margin keeps it off any edge)."""
    r, c = cell
    s = grid.cell_side_m
    x = grid.x0 + (c + rng.uniform(0.1, 0.9)) * s
    y = grid.y0 + (r + rng.uniform(0.1, 0.9)) * s
    lon, lat = grid.projection.to_lonlat(x, y)
    return float(lon), float(lat)


def generate(sc: CityScenario) -> SynthResult:
    """Simulate the fleet and render trips, snapshots and ground truth."""
    rng = np.random.default_rng(sc.seed)
    area = rect_area(sc.n_cols * sc.cell_side_m, sc.n_rows * sc.cell_side_m, sc.lon_c, sc.lat_c)
    grid = build_grid(area, sc.cell_side_m)
    labels = _patch_labels(sc, rng)
    cells = sorted(labels)
    cell_of = {i: c for i, c in enumerate(cells)}
    idx_of = {c: i for i, c in enumerate(cells)}
    classes = np.array([labels[c] for c in cells])
    rates = demand_rates(sc, labels, rng)

    horizon_min = sc.n_days * 1440
    # no demand in the last hour so every trip ends inside the window
    demand = []
    counts = rng.poisson(rates)  # hourly rates, hourly bins
    for ci in range(len(cells)):
        for d in range(sc.n_days):
            for h in range(24):
                k = counts[ci, d, h]
                if not k:
                    continue
                t0 = d * 1440 + h * 60
                for t in np.sort(rng.uniform(t0, t0 + 60, k)):
                    if t < horizon_min - 60:
                        demand.append((float(t), ci))
    demand.sort()

    # destination pools per class
    pool = {cls: np.array([i for i, c in enumerate(cells) if labels[c] == cls]) for cls in
            set(labels.values())}
    airport_idx = pool.get("airport", np.array([], dtype=int))
    all_idx = np.arange(len(cells))

    def pick_destination(origin_i: int, t_min: float) -> int:
        hour = (t_min % 1440) / 60.0
        cls = classes[origin_i]
        if len(airport_idx) and rng.uniform() < sc.airport_dest_share:
            return int(airport_idx[0])
        target = None
        if sc.commute_flows:
            if cls == "night" and 6 <= hour < 11:
                target = "day"
            elif cls == "day" and 15 <= hour < 21:
                target = "night"
        if target is None and rng.uniform() < sc.same_class_dest_bias and cls in pool:
            target = cls if len(pool[cls]) > 1 or pool[cls][0] != origin_i else None
        choices = pool.get(target, all_idx) if target is not None else all_idx
        return int(choices[int(rng.integers(len(choices)))])

    # initial fleet placement: weighted towards where cars sit at midnight
    w = np.array([{"night": 2.0, "neutral": 1.0, "day": 0.7, "airport": 1.5}[c] for c in classes])
    home = rng.choice(len(cells), size=sc.fleet_size, p=w / w.sum())
    pos = [
        _cell_point(grid, cell_of[int(h)], rng) for h in home
    ]
    avail_since = np.zeros(sc.fleet_size)  # minutes; available from t=0
    in_cell: dict[int, list] = {i: [] for i in range(len(cells))}
    for v, h in enumerate(home):
        in_cell[int(h)].append(v)

    intervals = [[(0.0, None, pos[v])] for v in range(sc.fleet_size)]  # (start, end, pos)
    trips = []
    thinned = 0
    lo_dur, hi_dur = sc.trip_minutes

    for t, origin_i in demand:
        cand = [v for v in in_cell[origin_i] if avail_since[v] + sc.min_dwell_minutes <= t]
        if not cand:
            thinned += 1
            continue
        v = cand[int(rng.integers(len(cand)))]
        dest_i = pick_destination(origin_i, t)
        duration = rng.uniform(lo_dur, hi_dur)
        end = min(t + duration, horizon_min - 2.0)
        if end <= t + 1.0:
            thinned += 1
            continue
        origin_pos = pos[v]
        for _ in range(20):
            dest_pos = _cell_point(grid, cell_of[dest_i], rng)
            dx = (dest_pos[0] - origin_pos[0]) * grid.projection.m_per_deg_lon
            dy = (dest_pos[1] - origin_pos[1]) * grid.projection.m_per_deg_lat
            if dx * dx + dy * dy >= 50.0**2:
                break
        in_cell[origin_i].remove(v)
        intervals[v][-1] = (intervals[v][-1][0], t, origin_pos)
        intervals[v].append((end, None, dest_pos))
        pos[v] = dest_pos
        avail_since[v] = end
        in_cell[dest_i].append(v)
        trips.append((v, t, end, origin_pos, dest_pos, origin_i, dest_i))

    if thinned:
        logger.warning("synth: %d demanded pickups thinned (no car available)", thinned)

    # render 1-minute snapshots from the parked intervals
    vins, minutes, lons, lats = [], [], [], []
    for v in range(sc.fleet_size):
        intervals[v][-1] = (intervals[v][-1][0], float(horizon_min), intervals[v][-1][2])
        for start, end, (plon, plat) in intervals[v]:
            m0 = int(np.ceil(start - 1e-9))
            m1 = int(np.ceil(end - 1e-9))  # parked at instants m0 .. m1-1
            if m1 <= m0:
                continue
            n = m1 - m0
            vins.append(np.full(n, v, dtype=np.int32))
            minutes.append(np.arange(m0, m1, dtype=np.int64))
            lons.append(np.full(n, plon))
            lats.append(np.full(n, plat))

    t0 = datetime.combine(sc.start, datetime.min.time())
    minute_arr = np.concatenate(minutes)
    frame = pd.DataFrame(
        {
            "vin": np.char.add("v", np.concatenate(vins).astype(str)),
            "timestamp": pd.Timestamp(t0) + pd.to_timedelta(minute_arr, unit="m"),
            "lon": np.concatenate(lons),
            "lat": np.concatenate(lats),
            "fuel": 100.0,
            "interior": "good",
            "exterior": "good",
            "engine": "combustion",
        }
    )
    frame = frame.sort_values(["vin", "timestamp"], kind="stable").reset_index(drop=True)

    base_ts = pd.Timestamp(t0)
    trip_frame = pd.DataFrame(
        {
            "vin": [f"v{tr[0]}" for tr in trips],
            "start_time": [base_ts + pd.to_timedelta(tr[1], unit="m") for tr in trips],
            "end_time": [base_ts + pd.to_timedelta(tr[2], unit="m") for tr in trips],
            "origin_lon": [tr[3][0] for tr in trips],
            "origin_lat": [tr[3][1] for tr in trips],
            "dest_lon": [tr[4][0] for tr in trips],
            "dest_lat": [tr[4][1] for tr in trips],
        }
    )
    if len(trip_frame):
        trip_frame["duration_min"] = (
            (trip_frame["end_time"] - trip_frame["start_time"]).dt.total_seconds() / 60.0
        )
        from .geo import haversine_m

        trip_frame["displacement_m"] = haversine_m(
            trip_frame["origin_lon"], trip_frame["origin_lat"],
            trip_frame["dest_lon"], trip_frame["dest_lat"],
        )
    else:
        trip_frame["duration_min"] = []
        trip_frame["displacement_m"] = []
    trip_frame = trip_frame.sort_values(["start_time", "vin"], kind="stable").reset_index(drop=True)

    calendar = pd.DataFrame(
        {
            "date": [sc.start + timedelta(days=d) for d in range(sc.n_days)],
            "is_weekday": [(sc.start + timedelta(days=d)).weekday() < 5 for d in range(sc.n_days)],
        }
    )
    return SynthResult(
        scenario=sc,
        area=area,
        grid=grid,
        snapshots=SnapshotSet(frame=frame, discarded={}, source="synthetic", timezone="local"),
        trips=TripSet(frame=trip_frame, stats={"ground_truth": True}),
        labels=labels,
        calendar=calendar,
        rates=rates,
        thinned=thinned,
    )


def sample_demand_panel(
    n_rows: int = 5,
    n_cols: int = 10,
    n_days: int = 45,
    bin_minutes: int = 60,
    start: date = date(2015, 5, 18),
    base_rate: float = 2.0,
    rate_spread: float = 0.5,
    daily_amplitude: float = 1.0,
    weekday_weekend_ratio: float = 1.0,
    seed: int = 0,
    kind: str = "pickup",
) -> tuple[EventPanel, Grid, np.ndarray]:
    """Poisson event panel with daily and weekly seasonality, plus its rates.

    A fast path for forecasting experiments that skips fleet simulation:
    counts are drawn directly from the planted rate tensor.
    """
    if 1440 % bin_minutes != 0:
        raise ValueError("bin_minutes must divide 1440")
    rng = np.random.default_rng(seed)
    area = rect_area(n_cols * 500.0, n_rows * 500.0)
    grid = build_grid(area, 500.0)
    cells = grid.active_cells
    n_cells = len(cells)
    bins = 1440 // bin_minutes

    mult = np.exp(rng.normal(0.0, rate_spread, n_cells))
    phase = rng.uniform(0, 2 * np.pi, n_cells)
    tt = 2 * np.pi * np.arange(bins) / bins
    shape = 1.0 + daily_amplitude * 0.5 * (np.sin(tt[None, :] - phase[:, None]) + 1.0)
    dates = [start + timedelta(days=d) for d in range(n_days)]
    wk = np.array([weekday_weekend_ratio if d.weekday() < 5 else 1.0 for d in dates])
    rates = base_rate * mult[:, None, None] * shape[:, None, :] * wk[None, :, None]
    rates = rates * (bin_minutes / 60.0)
    values = rng.poisson(rates).astype(float)
    panel = EventPanel(cells=cells, dates=dates, bin_minutes=bin_minutes, kind=kind, values=values)
    return panel, grid, rates


def planted_profiles(
    n_per_class: dict[str, int],
    noise_sd: float = 0.1,
    bins: int = 144,
    seed: int = 0,
) -> tuple[np.ndarray, list[str], list[CellId]]:
    """Availability profiles drawn from class templates plus Gaussian noise.

    ``noise_sd`` is expressed as a fraction of each template's peak-trough
    range.  Returns (profiles, labels, synthetic cell ids).
    """
    rng = np.random.default_rng(seed)
    t = np.arange(bins) * (1440 / bins) / 60.0  # hour of day
    templates = {
        "day": 1.0 + 0.5 * np.exp(-((t - 13.0) ** 2) / (2 * 3.0**2)) - 0.25,
        "night": 1.0 + 0.5 * (np.exp(-((t - 2.0) ** 2) / (2 * 3.0**2))
                              + np.exp(-((t - 23.5) ** 2) / (2 * 3.0**2))) - 0.2,
        "neutral": np.ones(bins),
        "airport": 1.0 + 5.0 * np.exp(-((t - 14.0) ** 2) / (2 * 4.0**2)) - 2.0,
    }
    profiles, labels, cells = [], [], []
    i = 0
    for cls, n in n_per_class.items():
        base = templates[cls]
        rng_range = float(base.max() - base.min()) or 1.0
        for _ in range(n):
            p = base + rng.normal(0.0, noise_sd * rng_range, bins)
            p = np.clip(p, 0.0, None)
            mean = p.mean()
            profiles.append(p / mean if mean > 0 else p)
            labels.append(cls)
            cells.append(CellId(i // 100, i % 100))
            i += 1
    return np.array(profiles), labels, cells
