"""Shared fixtures and small builders used across the test modules."""

import numpy as np
import pytest

from movehab import RasterGrid, Rng, Track


def make_grid(values, xll=0.0, yll=0.0, cellsize=100.0, nodata=-9999.0):
    v = np.asarray(values, dtype=np.float64)
    return RasterGrid(
        ncols=v.shape[1], nrows=v.shape[0], xll=xll, yll=yll,
        cellsize=cellsize, nodata=nodata, values=v,
    )


def make_track(coords, interval_s=3600, track_id="t1", t0=0):
    coords = np.asarray(coords, dtype=np.float64)
    times = t0 + interval_s * np.arange(coords.shape[0], dtype=np.int64)
    return Track(id=track_id, times=times, coords=coords)


def random_walk_track(rng: Rng, n: int, step=150.0, origin=(4000.0, 4000.0),
                      interval_s=3600, track_id="t1"):
    """A simple bounded-drift walk that stays well inside an 8 km square."""
    coords = np.empty((n, 2))
    coords[0] = origin
    for i in range(1, n):
        ang = 2.0 * np.pi * rng.uniform()
        r = step * (0.2 + rng.uniform())
        prop = coords[i - 1] + [r * np.cos(ang), r * np.sin(ang)]
        # reflect softly toward the center when drifting out
        prop = np.where(np.abs(prop - 4000.0) > 3000.0,
                        coords[i - 1] - (prop - coords[i - 1]), prop)
        coords[i] = prop
    return make_track(coords, interval_s=interval_s, track_id=track_id)


@pytest.fixture
def rng():
    return Rng(20260815)


@pytest.fixture
def ramp_grids():
    """Two 80x80 covariates on a shared 8 km extent: x-ramp and y-ramp."""
    n = 80
    col = np.linspace(0.0, 2.0, n)
    xs = np.tile(col, (n, 1))
    ys = np.tile(col[::-1, None], (1, n))
    return {"forage": make_grid(xs), "risk": make_grid(ys)}


@pytest.fixture
def walk_track(rng):
    return random_walk_track(rng.child("walk"), 160)
