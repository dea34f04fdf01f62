"""Square-cell tessellation of an operation area with queen neighbourhoods.

Cells are 500 m squares by default (the walking distance customers accept).
The grid is anchored at the south-west corner of the area's bounding box and
uses the area's local equirectangular projection; both are recorded so an
exported grid reloads bit-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geo import LocalProjection, OperationArea, clip_ring_to_rect, ring_area


class CellId(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class Grid:
    x0: float  # projected coords of the bounding box south-west corner
    y0: float
    cell_side_m: float
    n_rows: int
    n_cols: int
    projection: LocalProjection
    active_mask: np.ndarray  # (n_rows, n_cols) bool

    @property
    def lon0(self) -> float:
        lon, _ = self.projection.to_lonlat(self.x0, self.y0)
        return float(lon)

    @property
    def lat0(self) -> float:
        _, lat = self.projection.to_lonlat(self.x0, self.y0)
        return float(lat)

    @property
    def active_cells(self) -> list[CellId]:
        rows, cols = np.nonzero(self.active_mask)
        return [CellId(int(r), int(c)) for r, c in zip(rows, cols)]

    @property
    def n_active(self) -> int:
        return int(self.active_mask.sum())

    def is_active(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.n_rows and 0 <= c < self.n_cols and bool(self.active_mask[r, c])

    def cell_center_lonlat(self, cell) -> tuple[float, float]:
        r, c = cell
        x = self.x0 + (c + 0.5) * self.cell_side_m
        y = self.y0 + (r + 0.5) * self.cell_side_m
        lon, lat = self.projection.to_lonlat(x, y)
        return float(lon), float(lat)

    def cell_ring_lonlat(self, cell) -> np.ndarray:
        r, c = cell
        s = self.cell_side_m
        x0, y0 = self.x0 + c * s, self.y0 + r * s
        xs = np.array([x0, x0 + s, x0 + s, x0, x0])
        ys = np.array([y0, y0, y0 + s, y0 + s, y0])
        lon, lat = self.projection.to_lonlat(xs, ys)
        return np.column_stack([lon, lat])


def build_grid(area: OperationArea, cell_side_m: float = 500.0) -> Grid:
    """Tessellate the area's bounding box and mark cells intersecting it.

    A cell is active when its intersection with the area polygon has
    positive area (Sutherland-Hodgman clip in projected coordinates).
    """
    if cell_side_m <= 0:
        raise ValueError("cell_side_m must be positive")
    proj = area.projection
    ring_xy = area.ring_xy
    x_min, y_min = ring_xy.min(axis=0)
    x_max, y_max = ring_xy.max(axis=0)
    span_x = float(x_max - x_min)
    span_y = float(y_max - y_min)
    if span_x <= 0 or span_y <= 0:
        raise ValueError("operation area polygon is degenerate")
    # the epsilon keeps an exact multiple of the side from spawning an
    # extra empty row/column
    eps = 1e-9 * cell_side_m
    n_cols = max(1, int(np.ceil((span_x - eps) / cell_side_m)))
    n_rows = max(1, int(np.ceil((span_y - eps) / cell_side_m)))

    shifted = ring_xy - np.array([x_min, y_min])
    active = np.zeros((n_rows, n_cols), dtype=bool)
    for r in range(n_rows):
        for c in range(n_cols):
            cx0, cy0 = c * cell_side_m, r * cell_side_m
            clipped = clip_ring_to_rect(shifted, cx0, cy0, cx0 + cell_side_m, cy0 + cell_side_m)
            if len(clipped) >= 3 and abs(ring_area(clipped)) > 1e-9:
                active[r, c] = True
    active.setflags(write=False)

    return Grid(
        x0=float(x_min),
        y0=float(y_min),
        cell_side_m=float(cell_side_m),
        n_rows=n_rows,
        n_cols=n_cols,
        projection=proj,
        active_mask=active,
    )


def locate(grid: Grid, lon, lat):
    """Map a point to its cell, or None outside the bounding box.

    Points on a shared edge belong to the cell with the larger (row, col)
    index; points on the box's top/right edge are clamped into the last
    row/column so the box stays fully partitioned.
    """
    rows, cols = locate_many(grid, np.atleast_1d(lon), np.atleast_1d(lat))
    if rows[0] < 0:
        return None
    return CellId(int(rows[0]), int(cols[0]))


# sub-micrometre slack absorbs projection round-trip noise at exact edges
_EDGE_TOL = 1e-9


def locate_many(grid: Grid, lon, lat) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized locate; returns (-1, -1) for points outside the box."""
    x, y = grid.projection.to_xy(np.asarray(lon, float), np.asarray(lat, float))
    s = grid.cell_side_m
    fx = (x - grid.x0) / s + _EDGE_TOL
    fy = (y - grid.y0) / s + _EDGE_TOL
    col = np.floor(fx).astype(int)
    row = np.floor(fy).astype(int)
    col = np.where((col == grid.n_cols) & (fx <= grid.n_cols + 2 * _EDGE_TOL), grid.n_cols - 1, col)
    row = np.where((row == grid.n_rows) & (fy <= grid.n_rows + 2 * _EDGE_TOL), grid.n_rows - 1, row)
    bad = (col < 0) | (col >= grid.n_cols) | (row < 0) | (row >= grid.n_rows)
    return np.where(bad, -1, row), np.where(bad, -1, col)


def neighbors(grid: Grid, cell, hops: int = 1) -> set[CellId]:
    """Active cells within Chebyshev distance <= hops (queen moves), excluding cell."""
    if not grid.is_active(cell):
        raise ValueError(f"cell {tuple(cell)} is not an active cell of this grid")
    if hops < 0:
        raise ValueError("hops must be >= 0")
    r, c = cell
    out = set()
    for dr in range(-hops, hops + 1):
        for dc in range(-hops, hops + 1):
            if dr == 0 and dc == 0:
                continue
            cand = CellId(r + dr, c + dc)
            if grid.is_active(cand):
                out.add(cand)
    return out


def queen_edges(cells) -> list[tuple[int, int]]:
    """Undirected 1-hop queen adjacency over an explicit (row, col) list.

    Returns index pairs (i, j) with i < j into `cells`, each edge once.
    """
    index = {(int(r), int(c)): i for i, (r, c) in enumerate(cells)}
    edges = []
    for (r, c), i in index.items():
        for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
            j = index.get((r + dr, c + dc))
            if j is not None:
                edges.append((min(i, j), max(i, j)))
    return sorted(edges)


def grid_to_geojson(grid: Grid) -> dict:
    """One polygon feature per active cell plus the grid parameters."""
    features = []
    for cell in grid.active_cells:
        ring = grid.cell_ring_lonlat(cell).tolist()
        features.append(
            {
                "type": "Feature",
                "properties": {"row": cell.row, "col": cell.col},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return {
        "type": "FeatureCollection",
        "grid": {
            "x0": grid.x0,
            "y0": grid.y0,
            "cell_side_m": grid.cell_side_m,
            "n_rows": grid.n_rows,
            "n_cols": grid.n_cols,
            "proj_lon0": grid.projection.lon0,
            "proj_lat0": grid.projection.lat0,
        },
        "features": features,
    }


def grid_from_geojson(obj: dict | str) -> Grid:
    if isinstance(obj, str):
        with open(obj) as fh:
            obj = json.load(fh)
    meta = obj["grid"]
    active = np.zeros((meta["n_rows"], meta["n_cols"]), dtype=bool)
    for feat in obj["features"]:
        p = feat["properties"]
        active[p["row"], p["col"]] = True
    active.setflags(write=False)
    return Grid(
        x0=meta["x0"],
        y0=meta["y0"],
        cell_side_m=meta["cell_side_m"],
        n_rows=meta["n_rows"],
        n_cols=meta["n_cols"],
        projection=LocalProjection.at(meta["proj_lon0"], meta["proj_lat0"]),
        active_mask=active,
    )


def rect_area(width_m: float, height_m: float, lon_c: float = 9.19, lat_c: float = 45.46,
              name: str = "synthetic") -> OperationArea:
    """Axis-aligned rectangular operation area centred at (lon_c, lat_c)."""
    proj = LocalProjection.at(lon_c, lat_c)
    xs = np.array([-width_m / 2, width_m / 2, width_m / 2, -width_m / 2])
    ys = np.array([-height_m / 2, -height_m / 2, height_m / 2, height_m / 2])
    lon, lat = proj.to_lonlat(xs, ys)
    return OperationArea(ring=np.column_stack([lon, lat]), name=name)
