"""Command-line entry point wiring the analysis stages into subcommands.

Configuration comes from one INI file plus flag overrides; every randomized
stage receives a seed derived from the master seed, and every artifact is
registered in ``manifest.json`` with its SHA-256 so a rerun with the same
config and seed reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, clustering, features, forecasting, geo, grid as gridmod
from . import ingest, lasso, placement, spatial_stats, synth

logger = logging.getLogger("carshare")


class MissingInput(Exception):
    pass


def _seed_for(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _config_hash(cfg: configparser.ConfigParser) -> str:
    blob = json.dumps({s: dict(cfg[s]) for s in cfg.sections()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    """Resolved configuration, output directory and the artifact manifest."""

    def __init__(self, cfg: configparser.ConfigParser, outdir: Path, seed: int):
        self.cfg = cfg
        self.outdir = outdir
        self.seed = seed
        outdir.mkdir(parents=True, exist_ok=True)

    def param(self, key: str, default, cast=float):
        if self.cfg.has_option("params", key):
            raw = self.cfg.get("params", key)
            return cast(raw)
        return default

    def path(self, key: str, required: bool = False) -> Path | None:
        if self.cfg.has_option("paths", key):
            p = Path(self.cfg.get("paths", key))
            if required and not p.exists():
                raise MissingInput(f"input {key} = {p} does not exist")
            return p
        if required:
            raise MissingInput(f"config lacks required path {key!r}")
        return None

    def out(self, name: str) -> Path:
        return self.outdir / name

    def register(self, *paths: Path) -> None:
        manifest_path = self.outdir / "manifest.json"
        manifest = {"artifacts": {}}
        if manifest_path.exists():
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        manifest["config_hash"] = _config_hash(self.cfg)
        manifest["seed"] = self.seed
        manifest["versions"] = {
            "carshare": __version__,
            "python": ".".join(map(str, sys.version_info[:3])),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        }
        manifest["inputs"] = {
            k: str(v) for k, v in (self.cfg["paths"].items() if self.cfg.has_section("paths") else [])
        }
        for p in paths:
            manifest["artifacts"][p.name] = {"sha256": _sha256(p), "bytes": p.stat().st_size}
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        p = self.out(name)
        frame.to_csv(p, index=False)
        self.register(p)
        return p

    def write_json(self, obj, name: str) -> Path:
        p = self.out(name)
        with open(p, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.register(p)
        return p

    def write_geojson(self, obj: dict, name: str) -> Path:
        p = self.out(name)
        geo.write_geojson(obj, p)
        self.register(p)
        return p


def _load_area(ws: Workspace) -> geo.OperationArea:
    return geo.area_from_geojson(str(ws.path("area", required=True)))


def _load_grid(ws: Workspace) -> gridmod.Grid:
    cached = ws.path("grid")
    if cached and cached.exists():
        return gridmod.grid_from_geojson(str(cached))
    g = gridmod.build_grid(_load_area(ws), ws.param("cell_side_m", 500.0))
    return g


def _schema(ws: Workspace) -> dict | None:
    if ws.cfg.has_section("schema"):
        return dict(ws.cfg["schema"])
    return None


def _load_clean_snapshots(ws: Workspace) -> tuple[ingest.SnapshotSet, geo.OperationArea]:
    src = ws.path("snapshots", required=True)
    tz = ws.cfg.get("city", "timezone", fallback="UTC")
    snaps = ingest.parse_snapshots(str(src), schema=_schema(ws), tz=tz)
    area = _load_area(ws)
    return ingest.clean(snaps, area), area


def _load_trips(ws: Workspace) -> ingest.TripSet:
    cached = ws.path("trips")
    if cached and cached.exists():
        return ingest.read_trips_csv(str(cached))
    snaps, _ = _load_clean_snapshots(ws)
    return ingest.infer_trips(
        snaps,
        min_gap_minutes=ws.param("min_gap_minutes", 10.0),
        jitter_radius_m=ws.param("jitter_radius_m", 30.0),
    )


def cmd_synth(ws: Workspace, args) -> int:
    sy = ws.cfg["synth"] if ws.cfg.has_section("synth") else {}
    sc = synth.CityScenario(
        n_rows=int(sy.get("n_rows", 6)),
        n_cols=int(sy.get("n_cols", 6)),
        fleet_size=int(sy.get("fleet_size", 100)),
        n_days=int(sy.get("n_days", 10)),
        start=date.fromisoformat(sy.get("start", "2015-05-18")),
        base_rate_per_hour=float(sy.get("base_rate_per_hour", 0.8)),
        weekday_weekend_ratio=float(sy.get("weekday_weekend_ratio", 1.0)),
        airport=sy.get("airport", "false").lower() in ("1", "true", "yes"),
        seed=_seed_for(ws.seed, "synth"),
    )
    res = synth.generate(sc)
    snap = res.snapshots.frame.copy()
    snap["timestamp"] = snap["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
    ws.write_csv(snap, "snapshots.csv")
    truth = ws.out("truth_trips.csv")
    ingest.write_trips_csv(res.trips, truth)
    ws.register(truth)
    labels = pd.DataFrame(
        {
            "row": [c.row for c in sorted(res.labels)],
            "col": [c.col for c in sorted(res.labels)],
            "class": [res.labels[c] for c in sorted(res.labels)],
        }
    )
    ws.write_csv(labels, "truth_labels.csv")
    ws.write_csv(res.calendar, "calendar.csv")
    ws.write_geojson(geo.area_to_geojson(res.area), "area.geojson")
    ws.write_geojson(gridmod.grid_to_geojson(res.grid), "grid.geojson")
    print(f"synth: {len(res.trips.frame)} trips, {len(snap)} snapshots, "
          f"{res.grid.n_active} cells, thinned={res.thinned}")
    return 0


def cmd_ingest(ws: Workspace, args) -> int:
    snaps, _ = _load_clean_snapshots(ws)
    out = snaps.frame.copy()
    out["timestamp"] = out["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
    ws.write_csv(out, "snapshots_clean.csv")
    p = ws.out("discard_report.json")
    ingest.write_discard_report(snaps, None, p)
    ws.register(p)
    print(f"ingest: kept {len(snaps.frame)} snapshots, discarded {snaps.discarded}")
    return 0


def cmd_trips(ws: Workspace, args) -> int:
    snaps, _ = _load_clean_snapshots(ws)
    trips = ingest.infer_trips(
        snaps,
        min_gap_minutes=ws.param("min_gap_minutes", 10.0),
        jitter_radius_m=ws.param("jitter_radius_m", 30.0),
    )
    p = ws.out("trips.csv")
    ingest.write_trips_csv(trips, p)
    ws.register(p)
    rp = ws.out("discard_report.json")
    ingest.write_discard_report(snaps, trips, rp)
    ws.register(rp)

    df = snaps.frame
    fleet = int(df["vin"].nunique())
    days = (df["timestamp"].dt.date.max() - df["timestamp"].dt.date.min()).days + 1
    rate = ingest.utilisation_rate(trips, fleet, days) if fleet and days else 0.0
    g = _load_grid(ws)
    by_cell = ingest.utilisation_by_cell(trips, g, fleet, days)
    ws.write_csv(by_cell, "utilisation_cells.csv")
    ws.write_json(
        {"trips": len(trips.frame), "fleet_size": fleet, "observation_days": days,
         "trips_per_vehicle_per_day": rate},
        "utilisation.json",
    )
    print(f"trips: {len(trips.frame)} inferred, utilisation {rate:.3f}/vehicle/day")
    return 0


def cmd_grid(ws: Workspace, args) -> int:
    g = gridmod.build_grid(_load_area(ws), ws.param("cell_side_m", 500.0))
    ws.write_geojson(gridmod.grid_to_geojson(g), "grid.geojson")
    print(f"grid: {g.n_rows}x{g.n_cols}, {g.n_active} active cells")
    return 0


def cmd_features(ws: Workspace, args) -> int:
    trips = _load_trips(ws)
    g = _load_grid(ws)
    bin_minutes = int(ws.param("bin_minutes", 60))
    pick = features.bin_events(trips, g, bin_minutes, "pickup")
    drop = features.bin_events(trips, g, bin_minutes, "dropoff",
                               dates=(pick.dates[0], pick.dates[-1]))
    for kind, panel, other in (("pickup", pick, drop), ("dropoff", drop, pick)):
        table = features.build_feature_table(panel, g, companion=other)
        ws.write_csv(table, f"features_{kind}.csv")

    poi_path = ws.path("pois")
    if poi_path and poi_path.exists():
        prof = features.poi_profiles(pd.read_csv(poi_path))
        ws.write_csv(prof, "poi_entropy.csv")
    census_path = ws.path("census")
    if census_path and census_path.exists():
        with open(census_path) as fh:
            units = json.load(fh)
        table, flags = features.census_overlay(units, _load_area(ws), trips)
        ws.write_csv(table, "census_units.csv")
        ws.write_json({"log_transform": flags}, "census_log_flags.json")
    print(f"features: {g.n_active} cells, {pick.n_days} days, bin={bin_minutes}min")
    return 0


def cmd_forecast(ws: Workspace, args) -> int:
    trips = _load_trips(ws)
    g = _load_grid(ws)
    bin_minutes = int(args.bin_minutes or ws.param("bin_minutes", 60))
    pick = features.bin_events(trips, g, bin_minutes, "pickup")
    drop = features.bin_events(trips, g, bin_minutes, "dropoff",
                               dates=(pick.dates[0], pick.dates[-1]))
    kind = args.kind
    panel = pick if kind == "pickup" else drop
    keep = features.eligible_cells(panel, drop if kind == "pickup" else pick, min_total=30)
    if not keep:
        raise MissingInput("no cell exceeds the 30-event threshold")
    keep_idx = [panel.cell_index(c) for c in keep]
    panel = features.EventPanel(
        cells=keep, dates=panel.dates, bin_minutes=panel.bin_minutes,
        kind=panel.kind, values=panel.values[keep_idx],
    )
    spec = forecasting.SplitSpec(args.train_frac or ws.param("train_fraction", 0.8))
    train, test = forecasting.split(panel, spec)

    methods = list(forecasting.METHODS) if args.method == "all" else [args.method]
    seed = _seed_for(ws.seed, "forecast")
    rf_m = int(ws.param("rf_m", 0)) or None
    results = {}
    for m in methods:
        fc = forecasting.METHODS[m](
            grid=g, seed=seed, stepwise=True,
            n_trees=int(ws.param("rf_trees", 500)), m=rf_m,
        )
        fc.fit(train)
        rmse = forecasting.evaluate(fc, test)
        results[m] = (fc, rmse)
        ws.write_csv(rmse, f"rmse_{m.replace('+', 'plus')}.csv")

    if len(results) > 1:
        wins = forecasting.best_method_counts({m: r for m, (_, r) in results.items()})
        ws.write_csv(wins, "best_method.csv")

    # predicted-vs-observed series for the busiest cell
    busy = int(np.argmax(panel.total_by_cell()))
    series_rows = []
    for m, (fc, _) in results.items():
        pred = fc.predict_panel(test)
        for d in range(test.n_days):
            for b in range(test.bins_per_day):
                series_rows.append(
                    {"method": m, "date": test.dates[d], "bin": b,
                     "observed": test.values[busy, d, b], "predicted": pred[busy, d, b]}
                )
    ws.write_csv(pd.DataFrame(series_rows), "tagged_cell_series.csv")
    summary = {m: forecasting.rmse_summary(r) for m, (_, r) in results.items()}
    summary["tagged_cell"] = {"row": panel.cells[busy].row, "col": panel.cells[busy].col}
    ws.write_json(summary, "forecast_summary.json")
    for m, (_, r) in results.items():
        print(f"forecast[{m}]: median per-cell RMSE {r['rmse'].median():.3f}")
    return 0


def cmd_regress(ws: Workspace, args) -> int:
    units_csv = ws.out("census_units.csv")
    if not units_csv.exists():
        raise MissingInput("census_units.csv not found; run `features` with a census file first")
    table = pd.read_csv(units_csv)
    flags_path = ws.out("census_log_flags.json")
    log_cols = []
    if flags_path.exists():
        with open(flags_path) as fh:
            log_cols = json.load(fh)["log_transform"]
    design = lasso.build_design(table, log_columns=log_cols)
    cv = lasso.cv_select(
        design.X, design.y,
        folds=int(args.folds or ws.param("folds", 10)),
        seed=_seed_for(ws.seed, "regress"),
        names=design.names,
    )
    ws.write_csv(lasso.report(cv), "coefficients.csv")
    curve = pd.DataFrame(
        {"lambda": cv.fit.lambdas, "cv_mean": cv.cv_mean, "cv_se": cv.cv_se}
    )
    ws.write_csv(curve, "cv_curve.csv")
    print(f"regress: lambda_min={cv.lambda_min:.4g} lambda_1se={cv.lambda_1se:.4g} "
          f"active={cv.active}")
    return 0


def cmd_cluster(ws: Workspace, args) -> int:
    snaps, _ = _load_clean_snapshots(ws)
    g = _load_grid(ws)
    bin_minutes = int(args.bin_minutes or ws.param("availability_bin_minutes", 10))
    profiles, cells = clustering.availability_profiles(snaps, g, bin_minutes)
    if len(profiles) < 3:
        raise MissingInput("fewer than 3 cells with any availability")
    result = clustering.cluster_profiles(
        profiles, cells,
        band=int(args.band_bins or ws.param("band_bins", 12)),
        k_range=range(2, int(args.kmax or ws.param("kmax", 8)) + 1),
        seed=_seed_for(ws.seed, "cluster"),
    )
    assignment = result.labelled_cells()
    ws.write_csv(assignment, "cluster_assignment.csv")
    mean_rows = []
    for gid in (int(g) for g in np.unique(result.assignment)):
        mean = profiles[result.assignment == gid].mean(axis=0)
        for b, v in enumerate(mean):
            mean_rows.append({"cluster": gid, "label": result.cluster_labels[gid],
                              "bin": b, "availability": v})
    ws.write_csv(pd.DataFrame(mean_rows), "cluster_profiles.csv")
    feats = []
    for cell, gid in zip(result.cells, result.assignment):
        ring = g.cell_ring_lonlat(cell).tolist()
        feats.append({
            "type": "Feature",
            "properties": {"row": cell.row, "col": cell.col, "cluster": int(gid),
                           "label": result.cluster_labels[int(gid)]},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    ws.write_geojson({"type": "FeatureCollection", "features": feats}, "clusters.geojson")
    print(f"cluster: k={result.k}, labels={result.cluster_labels}, "
          f"silhouette={ {k: round(v, 3) for k, v in result.silhouette_by_k.items()} }")
    return 0


def cmd_joincount(ws: Workspace, args) -> int:
    assignment = ws.out("cluster_assignment.csv")
    if not assignment.exists():
        raise MissingInput("cluster_assignment.csv not found; run `cluster` first")
    frame = pd.read_csv(assignment)
    lattice = spatial_stats.LabelledLattice.from_assignment(frame)
    out = spatial_stats.join_count(
        lattice,
        permutations=int(args.permutations or ws.param("permutations", 999)),
        seed=_seed_for(ws.seed, "joincount"),
    )
    ws.write_csv(out, "joincount.csv")
    print(out.to_string(index=False))
    return 0


def cmd_service_areas(ws: Workspace, args) -> int:
    snaps, _ = _load_clean_snapshots(ws)
    g = _load_grid(ws)
    w = int(args.window_days or ws.param("window_days", 30))
    table = placement.coverage(snaps, g, w)
    ws.write_csv(table, "coverage.csv")
    sites = placement.select_sites(
        table,
        threshold=float(args.threshold or ws.param("threshold", 0.5)),
        top_k=int(args.top or ws.param("top_k", 3)),
    )
    feats = []
    for _, row in sites.iterrows():
        ring = g.cell_ring_lonlat((int(row["row"]), int(row["col"]))).tolist()
        feats.append({
            "type": "Feature",
            "properties": {"row": int(row["row"]), "col": int(row["col"]),
                           "fleet_fraction": row["fleet_fraction"],
                           "rank": int(row["rank"])},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    ws.write_geojson({"type": "FeatureCollection", "features": feats}, "service_sites.geojson")
    print(f"service-areas: W={w}d, {len(sites)} qualifying cells")
    return 0


def cmd_report(ws: Workspace, args) -> int:
    manifest_path = ws.outdir / "manifest.json"
    if not manifest_path.exists():
        raise MissingInput("no manifest.json in the output directory yet")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    verified = {}
    for name, meta in manifest.get("artifacts", {}).items():
        p = ws.outdir / name
        ok = p.exists() and _sha256(p) == meta["sha256"]
        verified[name] = {"sha256": meta["sha256"], "verified": bool(ok)}
    bundle = {
        "config_hash": manifest.get("config_hash"),
        "seed": manifest.get("seed"),
        "versions": manifest.get("versions"),
        "inputs": manifest.get("inputs"),
        "artifacts": verified,
    }
    p = ws.out("report.json")
    with open(p, "w") as fh:
        json.dump(bundle, fh, indent=2, sort_keys=True)
        fh.write("\n")
    bad = [n for n, v in verified.items() if not v["verified"]]
    print(f"report: {len(verified)} artifacts, {len(bad)} failed verification")
    return 0 if not bad else 1


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "trips": cmd_trips,
    "grid": cmd_grid,
    "features": cmd_features,
    "forecast": cmd_forecast,
    "regress": cmd_regress,
    "cluster": cmd_cluster,
    "joincount": cmd_joincount,
    "service-areas": cmd_service_areas,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carshare",
        description="Free-floating car sharing analytics pipeline",
    )
    parser.add_argument("--config", default="carshare.ini", help="INI configuration file")
    parser.add_argument("--outdir", default=None,
                        help="output directory (default from config or ./out; "
                             "env CARSHARE_OUTDIR overrides)")
    parser.add_argument("--seed", type=int, default=None, help="master random seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "forecast":
            p.add_argument("--method", default="all",
                           choices=[*forecasting.METHODS.keys(), "all"])
            p.add_argument("--kind", default="pickup", choices=["pickup", "dropoff"])
            p.add_argument("--bin-minutes", dest="bin_minutes", type=int, default=None)
            p.add_argument("--train-frac", dest="train_frac", type=float, default=None)
        elif name == "cluster":
            p.add_argument("--bin-minutes", dest="bin_minutes", type=int, default=None)
            p.add_argument("--band-bins", dest="band_bins", type=int, default=None)
            p.add_argument("--kmax", type=int, default=None)
        elif name == "joincount":
            p.add_argument("--permutations", type=int, default=None)
        elif name == "service-areas":
            p.add_argument("--window-days", dest="window_days", type=int, default=None)
            p.add_argument("--threshold", type=float, default=None)
            p.add_argument("--top", type=int, default=None)
        elif name == "regress":
            p.add_argument("--folds", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = configparser.ConfigParser()
    cfg_path = Path(args.config)
    if cfg_path.exists():
        cfg.read(cfg_path)
    elif args.config != "carshare.ini":
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return 2

    outdir = (
        args.outdir
        or os.environ.get("CARSHARE_OUTDIR")
        or (cfg.get("paths", "outdir") if cfg.has_option("paths", "outdir") else "out")
    )
    seed = args.seed
    if seed is None:
        seed = int(cfg.get("params", "seed")) if cfg.has_option("params", "seed") else 0

    ws = Workspace(cfg, Path(outdir), seed)
    try:
        return COMMANDS[args.command](ws, args)
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        logger.exception("internal failure in %r", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
