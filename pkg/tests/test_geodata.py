"""Raster and polygon tests against brute-force and scipy oracles."""

import math

import numpy as np
import pytest
import scipy.spatial
from hypothesis import given, settings
from hypothesis import strategies as st

from movehab import (
    DegenerateInput, ExtentMismatch, OutOfExtent, ParseError, Polygon,
    RasterGrid, Rng, buffer_convex, convex_hull, extract_covariates,
    extract_many, point_in_polygon, points_in_polygon, read_ascii_grid,
    sample_uniform_in_polygon, write_ascii_grid,
)
from movehab.geodata import check_shared_extent

from conftest import make_grid


def ray_cast_oracle(vertices, x, y):
    """Independent even-odd containment (boundary handled by caller)."""
    inside = False
    m = len(vertices)
    for i in range(m):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % m]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


# ---------------------------------------------------------------- rasters

def test_ascii_grid_round_trip_bytes(tmp_path):
    g = make_grid([[1.5, -2.25, 3.0], [0.125, -9999.0, 7.75]],
                  xll=10.5, yll=-3.25, cellsize=30.0)
    p1 = tmp_path / "a.asc"
    p2 = tmp_path / "b.asc"
    write_ascii_grid(g, p1)
    back = read_ascii_grid(p1)
    assert back.same_extent(g)
    assert np.array_equal(back.values, g.values)
    assert back.nodata == g.nodata
    write_ascii_grid(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_ascii_grid_full_precision_round_trip(tmp_path):
    vals = Rng(3).uniforms(12).reshape(3, 4) * 1e7
    g = make_grid(vals, xll=1 / 3, yll=2 / 7, cellsize=math.pi)
    write_ascii_grid(g, tmp_path / "g.asc")
    back = read_ascii_grid(tmp_path / "g.asc")
    # repr round-trip must be exact, not approximate
    assert np.array_equal(back.values, g.values)
    assert back.xll == g.xll and back.yll == g.yll and back.cellsize == g.cellsize


def test_read_rejects_missing_header(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 2\nnrows 1\nxllcorner 0\n")
    with pytest.raises(ParseError, match="line 4"):
        read_ascii_grid(p)


def test_read_rejects_wrong_value_count(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text(
        "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n"
        "NODATA_value -9999\n1 2 3\n4 5\n"
    )
    with pytest.raises(ParseError, match="line 8"):
        read_ascii_grid(p)


def test_read_rejects_bad_number(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text(
        "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n"
        "NODATA_value -9999\n1 oops\n"
    )
    with pytest.raises(ParseError, match="line 7"):
        read_ascii_grid(p)


def test_cell_lookup_orientation():
    # row 0 is the northern row; check all four corners
    g = make_grid([[1.0, 2.0], [3.0, 4.0]], xll=0.0, yll=0.0, cellsize=10.0)
    assert g.value_at(5.0, 15.0) == 1.0   # NW
    assert g.value_at(15.0, 15.0) == 2.0  # NE
    assert g.value_at(5.0, 5.0) == 3.0    # SW
    assert g.value_at(15.0, 5.0) == 4.0   # SE
    assert g.cell_center(0, 0) == (5.0, 15.0)
    assert g.cell_center(1, 1) == (15.0, 5.0)


def test_cell_lookup_edges():
    g = make_grid([[1.0, 2.0], [3.0, 4.0]], cellsize=10.0)
    # west and south outer edges are in, east and north are out
    assert g.value_at(0.0, 0.0) == 3.0
    with pytest.raises(OutOfExtent):
        g.value_at(20.0, 5.0)
    with pytest.raises(OutOfExtent):
        g.value_at(5.0, 20.0)
    with pytest.raises(OutOfExtent):
        g.value_at(-0.001, 5.0)


def test_valid_mask_nodata():
    g = make_grid([[1.0, -9999.0], [3.0, 4.0]])
    assert np.array_equal(g.valid_mask, [[True, False], [True, True]])
    gn = make_grid([[1.0, np.nan]], nodata=np.nan)
    assert np.array_equal(gn.valid_mask, [[True, False]])


def test_grid_shape_validation():
    with pytest.raises(ParseError):
        RasterGrid(ncols=3, nrows=2, xll=0, yll=0, cellsize=1.0,
                   nodata=-9999.0, values=np.zeros((2, 2)))
    with pytest.raises(ParseError):
        make_grid([[1.0]], cellsize=0.0)


def test_check_shared_extent():
    a = make_grid(np.zeros((2, 2)))
    b = make_grid(np.ones((2, 2)))
    check_shared_extent({"a": a, "b": b})
    c = make_grid(np.ones((2, 2)), xll=5.0)
    with pytest.raises(ExtentMismatch, match="c"):
        check_shared_extent({"a": a, "c": c})


def test_extract_covariates_values_and_missing():
    grids = {
        "u": make_grid([[1.0, -9999.0], [3.0, 4.0]], cellsize=10.0),
        "v": make_grid([[10.0, 20.0], [30.0, 40.0]], cellsize=10.0),
    }
    e = extract_covariates(grids, (15.0, 15.0))
    assert math.isnan(e.values["u"]) and e.values["v"] == 20.0
    assert e.missing == {"u"}
    with pytest.raises(OutOfExtent):
        extract_covariates(grids, (25.0, 5.0))


def test_extract_many_matches_scalar():
    grids = {
        "u": make_grid([[1.0, -9999.0], [3.0, 4.0]], cellsize=10.0),
        "v": make_grid([[10.0, 20.0], [30.0, 40.0]], cellsize=10.0),
    }
    pts = np.array([[5.0, 5.0], [15.0, 15.0], [25.0, 5.0], [5.0, 15.0]])
    values, in_extent, all_valid = extract_many(grids, pts)
    assert np.array_equal(in_extent, [True, True, False, True])
    assert np.array_equal(all_valid, [True, False, False, True])
    assert values["u"][0] == 3.0 and values["v"][3] == 10.0
    assert np.isnan(values["u"][1]) and np.isnan(values["v"][2])


# --------------------------------------------------------------- polygons

def test_polygon_validation():
    with pytest.raises(DegenerateInput):
        Polygon(np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(DegenerateInput):  # clockwise
        Polygon(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(DegenerateInput):  # bow tie
        Polygon(np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))


def test_polygon_area_and_bbox():
    p = Polygon(np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 3.0]]))
    assert p.area == 12.0
    assert p.bbox == (0.0, 0.0, 4.0, 3.0)


def test_convex_hull_matches_scipy():
    rng = Rng(17)
    for trial in range(20):
        pts = rng.uniforms(60).reshape(30, 2) * 100.0
        ours = convex_hull(pts)
        ref = scipy.spatial.ConvexHull(pts)
        assert ours.area == pytest.approx(ref.volume, rel=1e-12)
        ours_set = {tuple(v) for v in ours.vertices}
        ref_set = {tuple(pts[i]) for i in ref.vertices}
        assert ours_set == ref_set


def test_convex_hull_collinear_input():
    with pytest.raises(DegenerateInput):
        convex_hull(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


def test_point_in_polygon_hand_cases():
    sq = Polygon(np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]))
    assert point_in_polygon(sq, (1.0, 1.0))
    assert not point_in_polygon(sq, (3.0, 1.0))
    # boundary is inclusive: corner, edge midpoint
    assert point_in_polygon(sq, (0.0, 0.0))
    assert point_in_polygon(sq, (2.0, 1.0))
    assert not point_in_polygon(sq, (2.0 + 1e-6, 1.0))


def test_point_in_polygon_matches_ray_cast_oracle():
    v = np.array([[0.0, 0.0], [5.0, -1.0], [7.0, 3.0], [3.0, 6.0], [-1.0, 4.0]])
    poly = Polygon(v)
    rng = Rng(23)
    pts = rng.uniforms(600).reshape(300, 2) * 10.0 - 2.0
    got = points_in_polygon(poly, pts)
    for k, (x, y) in enumerate(pts):
        assert got[k] == ray_cast_oracle(v, x, y), (x, y)
        assert point_in_polygon(poly, (x, y)) == got[k]


def test_sample_uniform_in_polygon_properties():
    tri = Polygon(np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]))
    pts = sample_uniform_in_polygon(tri, 4000, Rng(5))
    assert pts.shape == (4000, 2)
    assert points_in_polygon(tri, pts).all()
    assert np.array_equal(pts, sample_uniform_in_polygon(tri, 4000, Rng(5)))
    # halves split by the line x + y = 5 have areas 25 and 12.5 + 12.5
    below = (pts[:, 0] + pts[:, 1] < 5.0).mean()
    assert below == pytest.approx(0.25, abs=0.03)


def test_buffer_convex_contains_and_grows():
    sq = Polygon(np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]))
    d = 1.0
    buf = buffer_convex(sq, d)
    # area grows by perimeter*d + pi d^2, approximated by the corner arcs
    want = 4.0 + 8.0 * d + math.pi * d * d
    assert buf.area == pytest.approx(want, rel=0.01)
    assert buf.area < want  # inscribed arc polygons undershoot
    for v in sq.vertices:
        assert point_in_polygon(buf, v)
    assert point_in_polygon(buf, (-0.9, 1.0))
    assert not point_in_polygon(buf, (-1.1, -1.1))
    assert buffer_convex(sq, 0.0) is sq


@given(st.integers(min_value=4, max_value=200))
@settings(max_examples=40, deadline=None)
def test_hull_contains_all_points(n):
    pts = Rng(n).uniforms(2 * n).reshape(n, 2)
    try:
        hull = convex_hull(pts)
    except DegenerateInput:
        return
    assert points_in_polygon(hull, pts).all()
