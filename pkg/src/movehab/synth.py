"""Synthetic landscapes and trajectories for examples and tests.

The generator pairs a smooth bump landscape with a three-state
switching walker whose transition probabilities respond to the local
covariate value, which gives every fitting routine in the package
something realistic to chew on.
"""

from __future__ import annotations

import math
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .distributions import (GammaParams, VonMisesParams, sample_gamma,
                            sample_vonmises)
from .errors import ExtentExhausted, MissingCovariate
from .geodata import RasterGrid, check_shared_extent
from .hmm import HmmModel, stationary_distribution, transition_matrix
from .rng import Rng
from .track import Track

_TWO_PI = 2.0 * math.pi


def bump_landscape(
    rng: Rng,
    ncols: int = 80,
    nrows: int = 80,
    cellsize: float = 1000.0,
    xll: float = 0.0,
    yll: float = 0.0,
    n_bumps: int = 6,
    low: float = 0.0,
    high: float = 3.0,
    nodata: float = -9999.0,
) -> RasterGrid:
    """Sum of random Gaussian bumps, rescaled to ``[low, high]``."""
    if n_bumps < 1:
        raise ValueError("n_bumps must be >= 1")
    width = ncols * cellsize
    height = nrows * cellsize
    cx = xll + (np.arange(ncols) + 0.5) * cellsize
    cy = yll + (nrows - np.arange(nrows) - 0.5) * cellsize
    gx, gy = np.meshgrid(cx, cy)
    raw = np.zeros((nrows, ncols))
    for _ in range(n_bumps):
        bx = xll + rng.uniform() * width
        by = yll + rng.uniform() * height
        sigma = (0.08 + 0.17 * rng.uniform()) * min(width, height)
        amp = 0.5 + 0.5 * rng.uniform()
        if rng.uniform() < 0.5:
            amp = -amp
        d2 = (gx - bx) ** 2 + (gy - by) ** 2
        raw += amp * np.exp(-0.5 * d2 / (sigma * sigma))
    lo = raw.min()
    hi = raw.max()
    if hi - lo < 1e-12:
        values = np.full((nrows, ncols), 0.5 * (low + high))
    else:
        values = low + (high - low) * (raw - lo) / (hi - lo)
    return RasterGrid(ncols=ncols, nrows=nrows, xll=xll, yll=yll,
                      cellsize=cellsize, nodata=nodata, values=values)


def default_model(covariate: str = "preydiv") -> HmmModel:
    """Three-state walker: resting, searching, relocating.

    Higher covariate values pull the chain toward the short-step state
    and make the long-step state harder to enter.
    """
    trans = np.zeros((3, 3, 2))
    # rows: from-state; last axis: (intercept, covariate slope)
    trans[0, 1] = (-1.6, -0.4)
    trans[0, 2] = (-3.0, -0.6)
    trans[1, 0] = (-2.0, 0.8)
    trans[1, 2] = (-2.2, -0.7)
    trans[2, 0] = (-3.0, 0.9)
    trans[2, 1] = (-1.4, 0.5)
    return HmmModel(
        n_states=3,
        step=(
            GammaParams(mean=800.0, sd=500.0),
            GammaParams(mean=3000.0, sd=1500.0),
            GammaParams(mean=9000.0, sd=4500.0),
        ),
        angle=(
            VonMisesParams(mu=0.0, kappa=0.3),
            VonMisesParams(mu=0.0, kappa=0.8),
            VonMisesParams(mu=0.0, kappa=2.5),
        ),
        trans_coefs=trans,
        trans_covariates=(covariate,),
    )


def simulate_on_landscape(
    model: HmmModel,
    grids: Mapping[str, RasterGrid],
    rng: Rng,
    n_locations: int,
    start: Optional[Tuple[float, float]] = None,
    interval_s: int = 3600,
    t0: int = 0,
    track_id: str = "sim",
    max_tries: int = 200,
) -> Tuple[Track, List[int]]:
    """Simulate a covariate-driven walker that stays on the rasters.

    Transitions read the covariates at each landing point. Steps that
    would leave the extent or land on nodata are redrawn (length and
    angle together) up to ``max_tries`` times. Returns the track and the
    1-based state governing each of its ``n_locations - 1`` steps.
    """
    if n_locations < 2:
        raise ValueError("n_locations must be >= 2")
    grids = dict(grids)
    check_shared_extent(grids)
    for c in model.trans_covariates:
        if c not in grids:
            raise MissingCovariate(f"no raster supplied for covariate {c!r}")
    first = next(iter(grids.values()))
    valid = np.ones((first.nrows, first.ncols), dtype=bool)
    for g in grids.values():
        valid &= g.valid_mask

    def cov_at(px: float, py: float) -> Dict[str, float]:
        r, c = first.cell_of(px, py)
        return {k: float(grids[k].values[r, c]) for k in model.trans_covariates}

    def is_ok(px: float, py: float) -> bool:
        if not (first.xll <= px < first.xmax and first.yll <= py < first.ymax):
            return False
        r, c = first.cell_of(px, py)
        return bool(valid[r, c])

    if start is None:
        rows, cols = np.nonzero(valid)
        ctr_x = first.xll + 0.5 * first.ncols * first.cellsize
        ctr_y = first.yll + 0.5 * first.nrows * first.cellsize
        cxs = first.xll + (cols + 0.5) * first.cellsize
        cys = first.yll + (first.nrows - rows - 0.5) * first.cellsize
        k = int(np.argmin((cxs - ctr_x) ** 2 + (cys - ctr_y) ** 2))
        start = (float(cxs[k]), float(cys[k]))
    if not is_ok(start[0], start[1]):
        raise MissingCovariate("start point lies outside the valid cells")

    x, y = float(start[0]), float(start[1])
    heading = -math.pi + _TWO_PI * rng.uniform()
    pi0 = stationary_distribution(transition_matrix(model, cov_at(x, y)))
    state = _draw_categorical(pi0, rng)

    xs = [x]
    ys = [y]
    states: List[int] = []
    for t in range(n_locations - 1):
        gp = model.step[state]
        vp = model.angle[state]
        for attempt in range(max_tries):
            length = sample_gamma(gp, rng)
            turn = sample_vonmises(vp, rng)
            nh = heading + turn
            nx = x + length * math.cos(nh)
            ny = y + length * math.sin(nh)
            if is_ok(nx, ny):
                break
        else:
            raise ExtentExhausted(
                f"walker stuck at step {t}: {max_tries} redraws left the extent"
            )
        states.append(state + 1)
        x, y, heading = nx, ny, nh
        xs.append(x)
        ys.append(y)
        if t < n_locations - 2:
            row = transition_matrix(model, cov_at(x, y))[state]
            state = _draw_categorical(row, rng)
    times = t0 + interval_s * np.arange(n_locations, dtype=np.int64)
    track = Track(id=track_id, times=times,
                  coords=np.column_stack((xs, ys)))
    return track, states


def _draw_categorical(probs: np.ndarray, rng: Rng) -> int:
    u = rng.uniform()
    acc = 0.0
    for i in range(probs.size - 1):
        acc += float(probs[i])
        if u < acc:
            return i
    return probs.size - 1


def make_dataset(
    seed: int,
    n_locations: int = 140,
    covariate: str = "preydiv",
    interval_s: int = 3600,
) -> Tuple[Track, Dict[str, RasterGrid], List[int]]:
    """One-call synthetic study: landscape, track, and true states."""
    root = Rng(seed)
    grid = bump_landscape(root.child("landscape"))
    model = default_model(covariate)
    track, states = simulate_on_landscape(
        model, {covariate: grid}, root.child("walker"), n_locations,
        interval_s=interval_s,
    )
    return track, {covariate: grid}, states
