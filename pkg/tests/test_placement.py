import numpy as np
import pandas as pd
import pytest

from carshare.grid import build_grid, rect_area
from carshare.ingest import SnapshotSet
from carshare.placement import coverage, select_sites
from carshare.synth import CityScenario, generate


def _snapshots(rows):
    return SnapshotSet(frame=pd.DataFrame(rows))


def _snap(vin, ts, lon, lat):
    return dict(vin=vin, timestamp=pd.Timestamp(ts), lon=lon, lat=lat,
                fuel=50.0, interior="good", exterior="good", engine="combustion")


def test_cell_visited_daily_by_all_reaches_one():
    grid = build_grid(rect_area(1000, 1000), 500)
    lon, lat = grid.cell_center_lonlat((0, 0))
    rows = []
    for day in range(5):
        for v in range(4):
            rows.append(_snap(f"v{v}", f"2015-05-{18 + day:02d}T10:00:00", lon, lat))
    table = coverage(_snapshots(rows), grid, window_days=3)
    top = table.iloc[0]
    assert (top["row"], top["col"]) == (0, 0)
    assert top["fleet_fraction"] == 1.0
    never = table[(table["row"] == 1) & (table["col"] == 1)].iloc[0]
    assert never["distinct_vehicles"] == 0


def test_window_longer_than_period_rejected():
    grid = build_grid(rect_area(1000, 1000), 500)
    lon, lat = grid.cell_center_lonlat((0, 0))
    rows = [_snap("v0", "2015-05-18T10:00:00", lon, lat)]
    with pytest.raises(ValueError):
        coverage(_snapshots(rows), grid, window_days=5)


def test_distinct_counting_revisits_once():
    grid = build_grid(rect_area(1000, 1000), 500)
    lon, lat = grid.cell_center_lonlat((0, 0))
    rows = []
    for day in (18, 19, 20):
        for hour in (9, 15, 21):  # same vehicle three times a day
            rows.append(_snap("v0", f"2015-05-{day}T{hour:02d}:00:00", lon, lat))
    table = coverage(_snapshots(rows), grid, window_days=3, fleet_size=1)
    assert table.iloc[0]["distinct_vehicles"] == 1


def test_coverage_monotone_in_window():
    sc = CityScenario(n_rows=4, n_cols=4, fleet_size=40, n_days=8, seed=31,
                      base_rate_per_hour=0.6)
    res = generate(sc)
    tables = {
        w: coverage(res.snapshots, res.grid, w, fleet_size=sc.fleet_size)
        for w in (2, 4, 7)
    }
    merged = tables[2].merge(tables[4], on=["row", "col"], suffixes=("_2", "_4"))
    merged = merged.merge(tables[7].rename(columns={"distinct_vehicles": "dv_7"}),
                          on=["row", "col"])
    assert (merged["distinct_vehicles_4"] >= merged["distinct_vehicles_2"]).all()
    assert (merged["dv_7"] >= merged["distinct_vehicles_4"]).all()
    assert (tables[7]["fleet_fraction"] <= 1.0).all()


def test_airport_ranks_first():
    sc = CityScenario(n_rows=5, n_cols=5, fleet_size=50, n_days=9, seed=32,
                      base_rate_per_hour=0.7, airport=True, airport_dest_share=0.12)
    res = generate(sc)
    airport_cell = next(c for c, l in res.labels.items() if l == "airport")
    table = coverage(res.snapshots, res.grid, window_days=7, fleet_size=sc.fleet_size)
    top = table.iloc[0]
    assert (top["row"], top["col"]) == tuple(airport_cell)


def test_select_sites_threshold_and_order():
    table = pd.DataFrame(
        {
            "row": [0, 0, 1, 2],
            "col": [0, 1, 0, 2],
            "distinct_vehicles": [90, 80, 60, 30],
            "fleet_fraction": [0.9, 0.8, 0.6, 0.3],
            "rank": [1, 2, 3, 4],
        }
    )
    picked = select_sites(table, threshold=0.5, top_k=3)
    assert list(picked["fleet_fraction"]) == [0.9, 0.8, 0.6]
    empty = select_sites(table, threshold=0.95, top_k=3)
    assert len(empty) == 0


def test_select_sites_tie_break_by_row_col():
    table = pd.DataFrame(
        {
            "row": [2, 0, 1],
            "col": [0, 1, 0],
            "distinct_vehicles": [50, 50, 50],
            "fleet_fraction": [0.5, 0.5, 0.5],
            "rank": [1, 2, 3],
        }
    )
    picked = select_sites(table, threshold=0.5, top_k=2)
    assert list(zip(picked["row"], picked["col"])) == [(0, 1), (1, 0)]


def test_trip_endpoint_mode():
    sc = CityScenario(n_rows=3, n_cols=3, fleet_size=20, n_days=4, seed=33)
    res = generate(sc)
    table = coverage(res.trips, res.grid, window_days=3, fleet_size=sc.fleet_size)
    assert (table["fleet_fraction"] <= 1.0).all()
    assert table["distinct_vehicles"].sum() > 0
    with pytest.raises(TypeError):
        coverage(42, res.grid, window_days=3)
