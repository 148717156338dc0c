"""Planar geometry and raster covariates.

Coordinates are projected (meters); nothing here knows about latitude or
longitude. Rasters use the six-line ASCII grid header (``ncols``, ``nrows``,
``xllcorner``, ``yllcorner``, ``cellsize``, ``NODATA_value``) followed by
``nrows`` data lines of ``ncols`` values, row 0 being the northernmost.

Polygons are stored as an open ring (first vertex not repeated) in
counter-clockwise order. Containment treats the boundary as inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .errors import (DegenerateInput, ExtentMismatch, OutOfExtent, ParseError)
from .rng import Rng

# points within this distance of an edge count as inside
_EDGE_EPS = 1e-9

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize",
                "nodata_value")


@dataclass(frozen=True)
class RasterGrid:
    """Regular grid of one covariate.

    ``values`` has shape (nrows, ncols) with row 0 the northernmost, so the
    cell at row r, column c has center
    ``(xll + (c + 0.5) * cellsize, yll + (nrows - r - 0.5) * cellsize)``.
    """

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise ParseError("grid must have at least one row and column")
        if not (self.cellsize > 0.0 and math.isfinite(self.cellsize)):
            raise ParseError(f"cellsize must be positive, got {self.cellsize}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.nrows, self.ncols):
            raise ParseError(
                f"values shape {v.shape} does not match "
                f"nrows={self.nrows} ncols={self.ncols}"
            )
        object.__setattr__(self, "values", v)

    @property
    def xmax(self) -> float:
        return self.xll + self.ncols * self.cellsize

    @property
    def ymax(self) -> float:
        return self.yll + self.nrows * self.cellsize

    @property
    def valid_mask(self) -> np.ndarray:
        if math.isnan(self.nodata):
            return ~np.isnan(self.values)
        return self.values != self.nodata

    def same_extent(self, other: "RasterGrid") -> bool:
        return (
            self.ncols == other.ncols
            and self.nrows == other.nrows
            and self.xll == other.xll
            and self.yll == other.yll
            and self.cellsize == other.cellsize
        )

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """Row/column of the cell containing (x, y).

        Cells are half-open: a point on the east or north outer edge is out.
        """
        cx = (x - self.xll) / self.cellsize
        cy = (y - self.yll) / self.cellsize
        if cx < 0.0 or cy < 0.0 or cx >= self.ncols or cy >= self.nrows:
            raise OutOfExtent(f"point ({x}, {y}) outside raster extent")
        return self.nrows - 1 - int(cy), int(cx)

    def value_at(self, x: float, y: float) -> float:
        r, c = self.cell_of(x, y)
        return float(self.values[r, c])

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.xll + (col + 0.5) * self.cellsize,
            self.yll + (self.nrows - row - 0.5) * self.cellsize,
        )


def read_ascii_grid(path) -> RasterGrid:
    """Read an ASCII grid; raises ParseError with the offending line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header: Dict[str, float] = {}
    for i, key in enumerate(_HEADER_KEYS):
        if i >= len(lines):
            raise ParseError(f"{path}: line {i + 1}: missing header line {key}")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise ParseError(
                f"{path}: line {i + 1}: expected '{key} <value>', got {lines[i]!r}"
            )
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(
                f"{path}: line {i + 1}: bad numeric value {parts[1]!r}"
            ) from None
    for key in ("ncols", "nrows"):
        if header[key] != int(header[key]) or header[key] < 1:
            raise ParseError(f"{path}: {key} must be a positive integer")
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    data_lines = [ln for ln in lines[6:] if ln.strip()]
    if len(data_lines) != nrows:
        raise ParseError(
            f"{path}: expected {nrows} data lines, found {len(data_lines)}"
        )
    rows = np.empty((nrows, ncols))
    for r, ln in enumerate(data_lines):
        parts = ln.split()
        if len(parts) != ncols:
            raise ParseError(
                f"{path}: line {r + 7}: expected {ncols} values, found {len(parts)}"
            )
        try:
            rows[r] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"{path}: line {r + 7}: bad numeric value") from None
    return RasterGrid(
        ncols=ncols,
        nrows=nrows,
        xll=header["xllcorner"],
        yll=header["yllcorner"],
        cellsize=header["cellsize"],
        nodata=header["nodata_value"],
        values=rows,
    )


def write_ascii_grid(grid: RasterGrid, path) -> None:
    """Write a grid so that reading it back reproduces it bit for bit."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ncols {grid.ncols}\n")
        fh.write(f"nrows {grid.nrows}\n")
        fh.write(f"xllcorner {grid.xll!r}\n")
        fh.write(f"yllcorner {grid.yll!r}\n")
        fh.write(f"cellsize {grid.cellsize!r}\n")
        fh.write(f"NODATA_value {grid.nodata!r}\n")
        for r in range(grid.nrows):
            fh.write(" ".join(repr(float(v)) for v in grid.values[r]))
            fh.write("\n")


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, counter-clockwise, first vertex not repeated."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise DegenerateInput("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise DegenerateInput("polygon vertices must be finite")
        object.__setattr__(self, "vertices", v)
        if self.area <= 0.0:
            raise DegenerateInput("polygon must be counter-clockwise with positive area")
        if _self_intersects(v):
            raise DegenerateInput("polygon edges intersect")

    @property
    def area(self) -> float:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def bbox(self) -> Tuple[float, float, float, float]:
        v = self.vertices
        return (
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
        )


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and \
        d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def _self_intersects(v: np.ndarray) -> bool:
    m = len(v)
    for i in range(m):
        a1, a2 = v[i], v[(i + 1) % m]
        for j in range(i + 1, m):
            # skip edges that share a vertex
            if j == i or (j + 1) % m == i or j == (i + 1) % m:
                continue
            if _segments_properly_intersect(a1, a2, v[j], v[(j + 1) % m]):
                return True
    return False


def convex_hull(points: np.ndarray) -> Polygon:
    """Convex hull by Andrew's monotone chain, collinear points dropped.

    Raises DegenerateInput when fewer than 3 distinct points remain or all
    points are collinear.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateInput("points must be an (n, 2) array")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("points must be finite")
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 3:
        raise DegenerateInput(f"need 3 distinct points, got {uniq.shape[0]}")
    pts = uniq[np.lexsort((uniq[:, 1], uniq[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    ring = np.array(lower[:-1] + upper[:-1])
    if len(ring) < 3:
        raise DegenerateInput("points are collinear")
    return Polygon(vertices=ring)


def _point_on_boundary(poly: Polygon, x: float, y: float) -> bool:
    v = poly.vertices
    m = len(v)
    for i in range(m):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % m]
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            continue
        t = ((x - x1) * dx + (y - y1) * dy) / seg2
        t = min(1.0, max(0.0, t))
        px, py = x1 + t * dx, y1 + t * dy
        if math.hypot(x - px, y - py) <= _EDGE_EPS:
            return True
    return False


def point_in_polygon(poly: Polygon, point) -> bool:
    """Boundary-inclusive containment by ray crossing."""
    x, y = float(point[0]), float(point[1])
    if _point_on_boundary(poly, x, y):
        return True
    v = poly.vertices
    m = len(v)
    inside = False
    j = m - 1
    for i in range(m):
        xi, yi = v[i]
        xj, yj = v[j]
        if (yi > y) != (yj > y):
            x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def points_in_polygon(poly: Polygon, points: np.ndarray) -> np.ndarray:
    """Vectorized boundary-inclusive containment for an (n, 2) array."""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    v = poly.vertices
    m = len(v)
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    j = m - 1
    for i in range(m):
        xi, yi = v[i]
        xj, yj = v[j]
        crosses = (yi > y) != (yj > y)
        if np.any(crosses):
            x_cross = xi + (y[crosses] - yi) * (xj - xi) / (yj - yi)
            upd = np.zeros(len(pts), dtype=bool)
            upd[crosses] = x[crosses] < x_cross
            inside ^= upd
        dx, dy = xj - xi, yj - yi
        seg2 = dx * dx + dy * dy
        if seg2 > 0.0:
            t = np.clip(((x - xi) * dx + (y - yi) * dy) / seg2, 0.0, 1.0)
            d2 = (x - (xi + t * dx)) ** 2 + (y - (yi + t * dy)) ** 2
            on_edge |= d2 <= _EDGE_EPS * _EDGE_EPS
        j = i
    return inside | on_edge


def sample_uniform_in_polygon(poly: Polygon, n: int, rng: Rng) -> np.ndarray:
    """Draw ``n`` points uniformly inside a polygon by bbox rejection.

    The batch policy is fixed, so a given (polygon, n, stream state) always
    produces the same points.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    xmin, ymin, xmax, ymax = poly.bbox
    rate = poly.area / ((xmax - xmin) * (ymax - ymin))
    out = np.empty((n, 2))
    got = 0
    while got < n:
        need = n - got
        batch = max(256, int(1.2 * need / rate) + 1)
        u = rng.uniforms(2 * batch)
        cand = np.column_stack(
            (xmin + (xmax - xmin) * u[0::2], ymin + (ymax - ymin) * u[1::2])
        )
        keep = cand[points_in_polygon(poly, cand)]
        take = min(need, len(keep))
        out[got:got + take] = keep[:take]
        got += take
    return out


def buffer_convex(poly: Polygon, dist: float, points_per_corner: int = 8) -> Polygon:
    """Outward buffer of a convex polygon (offset edges joined by arcs)."""
    if dist < 0.0:
        raise ValueError("buffer distance must be >= 0")
    if dist == 0.0:
        return poly
    v = poly.vertices
    m = len(v)
    for i in range(m):
        o, a, b = v[i - 1], v[i], v[(i + 1) % m]
        if (a[0] - o[0]) * (b[1] - a[1]) - (a[1] - o[1]) * (b[0] - a[0]) <= 0.0:
            raise DegenerateInput("buffer_convex needs a strictly convex polygon")
    ring = []
    for i in range(m):
        a = v[i]
        prev_d = a - v[i - 1]
        next_d = v[(i + 1) % m] - a
        # outward normals of the two incident edges (CCW ring: right side)
        n1 = math.atan2(-prev_d[0], prev_d[1])
        n2 = math.atan2(-next_d[0], next_d[1])
        while n2 < n1:
            n2 += 2.0 * math.pi
        span = n2 - n1
        steps = max(1, int(math.ceil(span / (math.pi / points_per_corner))))
        for s in range(steps + 1):
            ang = n1 + span * s / steps
            ring.append((a[0] + dist * math.cos(ang), a[1] + dist * math.sin(ang)))
    return convex_hull(np.asarray(ring))


def check_shared_extent(grids: Mapping[str, RasterGrid]) -> None:
    """Raise ExtentMismatch unless all grids align exactly."""
    items = list(grids.items())
    for name, g in items[1:]:
        if not items[0][1].same_extent(g):
            raise ExtentMismatch(
                f"grid {name!r} does not align with {items[0][0]!r}"
            )


@dataclass(frozen=True)
class Extraction:
    """Covariate values at one point; missing entries are NaN and flagged."""

    values: Dict[str, float]
    missing: frozenset = field(default_factory=frozenset)


def extract_covariates(grids: Mapping[str, RasterGrid], point) -> Extraction:
    """Cell values of every grid at a point.

    Raises OutOfExtent when the point is outside the shared extent and
    ExtentMismatch when the grids do not align.
    """
    check_shared_extent(grids)
    values: Dict[str, float] = {}
    missing = set()
    for name, g in grids.items():
        v = g.value_at(float(point[0]), float(point[1]))
        bad = math.isnan(v) if math.isnan(g.nodata) else v == g.nodata
        if bad:
            values[name] = math.nan
            missing.add(name)
        else:
            values[name] = v
    return Extraction(values=values, missing=frozenset(missing))


def extract_many(
    grids: Mapping[str, RasterGrid], points: np.ndarray
) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Bulk extraction.

    Returns (values per grid, in_extent mask, all_valid mask); values are
    NaN where out of extent or nodata. Grids must already align.
    """
    check_shared_extent(grids)
    pts = np.asarray(points, dtype=np.float64)
    if not grids:
        n = len(pts)
        return {}, np.ones(n, dtype=bool), np.ones(n, dtype=bool)
    first = next(iter(grids.values()))
    cx = (pts[:, 0] - first.xll) / first.cellsize
    cy = (pts[:, 1] - first.yll) / first.cellsize
    in_extent = (cx >= 0.0) & (cy >= 0.0) & (cx < first.ncols) & (cy < first.nrows)
    col = np.clip(cx.astype(np.int64), 0, first.ncols - 1)
    row = first.nrows - 1 - np.clip(cy.astype(np.int64), 0, first.nrows - 1)
    values: Dict[str, np.ndarray] = {}
    all_valid = in_extent.copy()
    for name, g in grids.items():
        v = g.values[row, col].astype(np.float64)
        bad = np.isnan(v) if math.isnan(g.nodata) else v == g.nodata
        v = np.where(in_extent & ~bad, v, np.nan)
        values[name] = v
        all_valid &= ~np.isnan(v)
    return values, in_extent, all_valid
