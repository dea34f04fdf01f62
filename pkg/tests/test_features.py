import math
from datetime import date

import numpy as np
import pandas as pd
import pytest

from carshare.features import (
    bin_events,
    build_feature_table,
    census_overlay,
    eligible_cells,
    neighbor_average,
    poi_profiles,
    venue_entropy,
)
from carshare.geo import LocalProjection, OperationArea
from carshare.grid import build_grid, rect_area
from carshare.ingest import TripSet
from carshare.synth import CityScenario, generate, sample_demand_panel


def _trip_at(grid, cell, ts, vin="a"):
    lon, lat = grid.cell_center_lonlat(cell)
    return dict(
        vin=vin,
        start_time=pd.Timestamp(ts),
        end_time=pd.Timestamp(ts) + pd.Timedelta(minutes=20),
        origin_lon=lon,
        origin_lat=lat,
        dest_lon=lon,
        dest_lat=lat,
        duration_min=20.0,
        displacement_m=0.0,
    )


def test_single_pickup_lands_in_bin_10():
    grid = build_grid(rect_area(1000, 1000), 500)
    trips = TripSet(frame=pd.DataFrame([_trip_at(grid, (0, 0), "2015-05-18T10:07:00")]))
    panel = bin_events(trips, grid, bin_minutes=60, kind="pickup")
    i = panel.cell_index((0, 0))
    assert panel.values[i, 0, 10] == 1
    assert panel.values.sum() == 1


def test_binning_conserves_trip_count():
    res = generate(CityScenario(n_rows=3, n_cols=3, fleet_size=20, n_days=3, seed=13))
    panel = bin_events(res.trips, res.grid, 60, "pickup")
    assert panel.values.sum() == len(res.trips.frame)
    drop = bin_events(res.trips, res.grid, 60, "dropoff")
    assert drop.values.sum() == len(res.trips.frame)


def test_bad_bin_length_rejected():
    grid = build_grid(rect_area(1000, 1000), 500)
    trips = TripSet(frame=pd.DataFrame([_trip_at(grid, (0, 0), "2015-05-18T10:07:00")]))
    with pytest.raises(ValueError):
        bin_events(trips, grid, bin_minutes=37)


def test_neighbor_average_interior_and_isolated():
    panel, grid, _ = sample_demand_panel(n_rows=5, n_cols=5, n_days=2, seed=1)
    values = np.zeros_like(panel.values)
    # give every cell around the centre exactly 2 events in (day 0, bin 0)
    centre = panel.cell_index((2, 2))
    for i, cell in enumerate(panel.cells):
        if i != centre and max(abs(cell.row - 2), abs(cell.col - 2)) <= 2:
            values[i, 0, 0] = 2.0
    panel.values = values
    nb = neighbor_average(panel, grid, hops=2)
    assert nb[centre, 0, 0] == 2.0

    single = sample_demand_panel(n_rows=1, n_cols=1, n_days=2, seed=1)[0]
    nb1 = neighbor_average(single, build_grid(rect_area(500, 500), 500), hops=2)
    assert np.all(nb1 == 0.0)


def test_feature_table_shape_and_threshold():
    panel, grid, _ = sample_demand_panel(n_rows=3, n_cols=3, n_days=4, base_rate=2.0, seed=2)
    keep = eligible_cells(panel, min_total=30)
    table = build_feature_table(panel, grid, min_total=30)
    assert len(table) == len(keep) * panel.n_days * panel.bins_per_day
    # a silent cell is excluded
    panel.values[panel.cell_index((0, 0))] = 0.0
    table2 = build_feature_table(panel, grid, min_total=30)
    assert (0, 0) not in set(zip(table2["row"], table2["col"]))


def test_threshold_counts_pickups_plus_dropoffs():
    panel, grid, _ = sample_demand_panel(n_rows=2, n_cols=2, n_days=2, base_rate=0.5, seed=3)
    companion = sample_demand_panel(n_rows=2, n_cols=2, n_days=2, base_rate=0.5, seed=4)[0]
    both = eligible_cells(panel, companion, min_total=30)
    alone = eligible_cells(panel, None, min_total=30)
    assert set(alone) <= set(both)


def test_entropy_reference_values():
    assert venue_entropy([7, 0, 0]) == 0.0
    assert venue_entropy([3] * 8) == pytest.approx(math.log(8), abs=1e-12)
    assert venue_entropy([3, 1]) == pytest.approx(0.5623, abs=1e-4)
    assert venue_entropy([]) == 0.0
    with pytest.raises(ValueError):
        venue_entropy([-1, 2])


def test_entropy_bounds_on_random_profiles():
    rng = np.random.default_rng(0)
    for _ in range(200):
        counts = rng.integers(0, 50, 8)
        e = venue_entropy(counts)
        assert 0.0 <= e <= math.log(8) + 1e-12
    # extremes are attained exactly at the stated configurations
    assert venue_entropy([9, 0, 0, 0, 0, 0, 0, 0]) == 0.0
    assert venue_entropy([4] * 8) == pytest.approx(math.log(8), abs=1e-12)


def test_poi_profiles_excludes_event_category():
    table = pd.DataFrame(
        {
            "area_id": [1, 1, 1, 2],
            "category": ["Food", "Event", "Residence", "Food"],
            "count": [3, 5, 1, 2],
        }
    )
    prof = poi_profiles(table)
    assert "Event" not in prof.columns
    r1 = prof[prof["area_id"] == 1].iloc[0]
    assert r1["n_pois"] == 4
    assert r1["entropy"] == pytest.approx(venue_entropy([3, 1]))


def _unit(proj, x0, y0, x1, y1, **props):
    xs = np.array([x0, x1, x1, x0])
    ys = np.array([y0, y0, y1, y1])
    lon, lat = proj.to_lonlat(xs, ys)
    ring = [[float(a), float(b)] for a, b in zip(lon, lat)]
    ring.append(ring[0])
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {"type": "Polygon", "coordinates": [ring]},
    }


def test_census_overlay_scaling_and_threshold():
    area = rect_area(2000, 2000)
    proj = area.projection
    # area spans [-1000,1000]^2 in projected coords
    units = [
        _unit(proj, -900, -900, -100, -100, unit_id="inside", population=100.0),
        _unit(proj, 500, -400, 1500, 400, unit_id="half", population=60.0),
        _unit(proj, 810, 810, 1810, 1810, unit_id="corner", population=50.0),  # 19%»3.6%
    ]
    trips = TripSet(
        frame=pd.DataFrame(
            [
                dict(
                    vin="a",
                    start_time=pd.Timestamp("2015-05-18T10:00:00"),
                    end_time=pd.Timestamp("2015-05-18T10:20:00"),
                    origin_lon=units[0]["geometry"]["coordinates"][0][0][0] + 1e-3,
                    origin_lat=units[0]["geometry"]["coordinates"][0][0][1] + 1e-3,
                    dest_lon=9.19,
                    dest_lat=45.46,
                    duration_min=20.0,
                    displacement_m=100.0,
                )
            ]
        )
    )
    table, flags = census_overlay(units, area, trips)
    assert set(table["unit_id"]) == {"inside", "half"}
    inside = table[table["unit_id"] == "inside"].iloc[0]
    half = table[table["unit_id"] == "half"].iloc[0]
    assert inside["overlap_frac"] == pytest.approx(1.0, abs=1e-9)
    assert inside["population"] == pytest.approx(100.0, abs=1e-6)
    assert half["overlap_frac"] == pytest.approx(0.5, abs=1e-9)
    assert half["population"] == pytest.approx(30.0, abs=1e-6)


def test_census_overlay_19_percent_discarded():
    area = rect_area(2000, 2000)
    proj = area.projection
    # 19% horizontal sliver overlap
    unit = _unit(proj, 810, -500, 1810, 500, unit_id="sliver", population=10.0)
    ok = _unit(proj, -500, -500, 500, 500, unit_id="ok", population=10.0)
    table, _ = census_overlay([unit, ok], area, TripSet(frame=pd.DataFrame(columns=[
        "vin", "start_time", "end_time", "origin_lon", "origin_lat",
        "dest_lon", "dest_lat", "duration_min", "displacement_m"])))
    assert list(table["unit_id"]) == ["ok"]


def test_census_overlay_no_survivor_is_fatal():
    area = rect_area(2000, 2000)
    proj = area.projection
    unit = _unit(proj, 5000, 5000, 6000, 6000, unit_id="far", population=10.0)
    with pytest.raises(RuntimeError):
        census_overlay([unit], area, TripSet(frame=pd.DataFrame(columns=[
            "vin", "start_time", "end_time", "origin_lon", "origin_lat",
            "dest_lon", "dest_lat", "duration_min", "displacement_m"])))


def test_census_overlay_flags_skewed_indicators():
    area = rect_area(4000, 4000)
    proj = area.projection
    rng = np.random.default_rng(0)
    units = []
    for i in range(30):
        x = -1900 + (i % 6) * 600
        y = -1900 + (i // 6) * 600
        units.append(
            _unit(
                proj, x, y, x + 500, y + 500,
                unit_id=i,
                symmetric=float(rng.normal(10, 1)),
                heavy=float(np.exp(rng.normal(0, 2.5))),
            )
        )
    empty = TripSet(frame=pd.DataFrame(columns=[
        "vin", "start_time", "end_time", "origin_lon", "origin_lat",
        "dest_lon", "dest_lat", "duration_min", "displacement_m"]))
    table, flags = census_overlay(units, area, empty)
    assert "heavy" in flags and "symmetric" not in flags
