"""Movement tracks and step series.

A :class:`Track` is one animal's time-ordered relocations. Model fitting
never consumes tracks directly; they are first cut into regular bursts
(:func:`validate_regular`) and converted to steps (:func:`to_steps`), each
step carrying its length, heading, turn angle, and endpoint covariates.

Timestamps are integer epoch seconds. The CSV reader accepts either raw
epoch seconds or ISO-8601 (naive times are taken as UTC).
"""

from __future__ import annotations

import csv
import datetime
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (DuplicateTimestamp, MissingCovariate, NonFiniteCoordinate,
                     OutOfExtent, ParseError)
from .geodata import RasterGrid, check_shared_extent, extract_many

logger = logging.getLogger(__name__)

# steps shorter than this (meters) get their length floored and no heading
MIN_STEP_LENGTH = 1e-3


@dataclass(frozen=True)
class Track:
    """Time-ordered relocations of one animal.

    Invariants: at least one location, strictly increasing times, finite
    coordinates. A single-location track is allowed (thinning can produce
    one) but is unusable for any model.
    """

    id: str
    times: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.int64)
        xy = np.asarray(self.coords, dtype=np.float64)
        if t.ndim != 1 or t.size < 1:
            raise ParseError("track needs at least one location")
        if xy.shape != (t.size, 2):
            raise ParseError(
                f"coords shape {xy.shape} does not match {t.size} times"
            )
        if not np.all(np.isfinite(xy)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(xy), axis=1))[0])
            raise NonFiniteCoordinate(
                f"track {self.id!r}: non-finite coordinate at index {bad}"
            )
        d = np.diff(t)
        if np.any(d == 0):
            bad = int(np.flatnonzero(d == 0)[0])
            raise DuplicateTimestamp(
                f"track {self.id!r}: duplicate timestamp at index {bad + 1}"
            )
        if np.any(d < 0):
            bad = int(np.flatnonzero(d < 0)[0])
            raise ParseError(
                f"track {self.id!r}: times not increasing at index {bad + 1}"
            )
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "coords", xy)

    def __len__(self) -> int:
        return self.times.size

    @property
    def x(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.coords[:, 1]


def _parse_time(text: str, where: str) -> int:
    s = text.strip()
    try:
        return int(s)
    except ValueError:
        pass
    iso = s.replace("Z", "+00:00") if s.endswith("Z") else s
    try:
        dt = datetime.datetime.fromisoformat(iso)
    except ValueError:
        raise ParseError(f"{where}: cannot parse time {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=datetime.timezone.utc)
    return round(dt.timestamp())


def read_track_csv(path) -> List[Track]:
    """Read ``id,t,x,y`` rows into one sorted Track per id.

    Ids appear in first-occurrence order. Rows for an id are sorted by
    time; duplicate times within an id raise DuplicateTimestamp.
    """
    per_id: Dict[str, List[Tuple[int, float, float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        cols = [c.strip().lower() for c in header]
        try:
            idx = [cols.index(c) for c in ("id", "t", "x", "y")]
        except ValueError:
            raise ParseError(
                f"{path}: line 1: header must contain id,t,x,y, got {header!r}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if max(idx) >= len(row):
                raise ParseError(f"{path}: line {lineno}: too few columns")
            tid = row[idx[0]].strip()
            t = _parse_time(row[idx[1]], f"{path}: line {lineno}")
            try:
                x = float(row[idx[2]])
                y = float(row[idx[3]])
            except ValueError:
                raise ParseError(
                    f"{path}: line {lineno}: bad coordinate"
                ) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise NonFiniteCoordinate(
                    f"{path}: line {lineno}: non-finite coordinate"
                )
            per_id.setdefault(tid, []).append((t, x, y))
    if not per_id:
        raise ParseError(f"{path}: no data rows")
    tracks = []
    for tid, rows in per_id.items():
        rows.sort(key=lambda r: r[0])
        times = np.array([r[0] for r in rows], dtype=np.int64)
        coords = np.array([(r[1], r[2]) for r in rows])
        tracks.append(Track(id=tid, times=times, coords=coords))
    return tracks


def validate_regular(
    track: Track, interval_s: float, tol_fraction: float = 0.1
) -> List[Track]:
    """Split a track into bursts of near-regular sampling.

    Consecutive locations stay in one burst when their gap is within
    ``tol_fraction`` of ``interval_s``; anything else starts a new burst.
    Single-location bursts are dropped (with a log note).
    """
    if interval_s <= 0.0:
        raise ValueError("interval_s must be positive")
    if not 0.0 <= tol_fraction < 1.0:
        raise ValueError("tol_fraction must be in [0, 1)")
    lo = interval_s * (1.0 - tol_fraction)
    hi = interval_s * (1.0 + tol_fraction)
    bursts: List[Track] = []
    start = 0
    n_dropped = 0
    for i in range(1, len(track) + 1):
        end_burst = i == len(track)
        if not end_burst:
            gap = float(track.times[i] - track.times[i - 1])
            end_burst = not (lo <= gap <= hi)
        if end_burst:
            if i - start >= 2:
                bursts.append(
                    Track(
                        id=track.id,
                        times=track.times[start:i],
                        coords=track.coords[start:i],
                    )
                )
            else:
                n_dropped += 1
            start = i
    if n_dropped:
        logger.warning(
            "track %r: dropped %d single-location burst(s)", track.id, n_dropped
        )
    return bursts


def interpolate_regular(
    track: Track, interval_s: float, max_gap_s: float
) -> Track:
    """Linear interpolation onto the regular lattice anchored at the start.

    Lattice times are ``t0 + k * interval_s``. Points falling inside an
    observation gap longer than ``max_gap_s`` are omitted; points equal to
    an observation time keep the observed coordinates exactly.
    """
    if interval_s <= 0.0 or int(interval_s) != interval_s:
        raise ValueError("interval_s must be a positive whole number of seconds")
    if max_gap_s < interval_s:
        raise ValueError("max_gap_s must be at least interval_s")
    step = int(interval_s)
    t0 = int(track.times[0])
    t_end = int(track.times[-1])
    lattice = np.arange(t0, t_end + 1, step, dtype=np.int64)
    right = np.searchsorted(track.times, lattice, side="left")
    keep = []
    coords = []
    for i, lt in enumerate(lattice):
        r = int(right[i])
        if r < len(track) and track.times[r] == lt:
            keep.append(lt)
            coords.append(track.coords[r])
            continue
        gap = float(track.times[r] - track.times[r - 1])
        if gap > max_gap_s:
            continue
        frac = (lt - track.times[r - 1]) / gap
        coords.append(
            track.coords[r - 1] + frac * (track.coords[r] - track.coords[r - 1])
        )
        keep.append(lt)
    return Track(
        id=track.id,
        times=np.array(keep, dtype=np.int64),
        coords=np.array(coords),
    )


def thin(track: Track, k: int) -> Track:
    """Keep every k-th location starting from the first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return Track(id=track.id, times=track.times[::k], coords=track.coords[::k])


@dataclass
class StepSeries:
    """Steps from one animal's bursts, with endpoint covariates.

    ``offsets`` delimits bursts: steps ``offsets[b]:offsets[b + 1]`` form
    one unbroken sequence. ``heading`` and ``turn`` are NaN where undefined
    (floored zero-length steps and each burst's first step).
    """

    track_id: str
    start: np.ndarray
    end: np.ndarray
    t_end: np.ndarray
    length: np.ndarray
    heading: np.ndarray
    turn: np.ndarray
    burst: np.ndarray
    offsets: np.ndarray
    covariates: Dict[str, np.ndarray]
    n_floored: int = 0

    def __len__(self) -> int:
        return self.length.size

    @property
    def cos_turn(self) -> np.ndarray:
        return np.cos(self.turn)

    def column(self, name: str) -> np.ndarray:
        if name == "l":
            return self.length
        if name == "ln_l":
            return np.log(self.length)
        if name == "cos_theta":
            return self.cos_turn
        if name in self.covariates:
            return self.covariates[name]
        raise MissingCovariate(f"step series has no column {name!r}")


def to_steps(
    bursts: Sequence[Track], grids: Optional[Mapping[str, RasterGrid]] = None
) -> StepSeries:
    """Convert regular bursts into a step series.

    Step t runs from location t to t + 1. Lengths are floored at
    ``MIN_STEP_LENGTH`` (floored steps get no heading). Covariates are the
    raster values at each step's endpoint; an endpoint outside the raster
    extent is an error naming the step.
    """
    grids = dict(grids or {})
    if grids:
        check_shared_extent(grids)
    usable = [b for b in bursts if len(b) >= 2]
    if len(usable) < len(bursts):
        logger.warning("dropped %d burst(s) with fewer than 2 locations",
                       len(bursts) - len(usable))
    if not usable:
        raise ParseError("no burst has at least 2 locations")
    track_id = usable[0].id

    starts, ends, t_end, lengths, headings, turns, burst_ix = \
        [], [], [], [], [], [], []
    offsets = [0]
    n_floored = 0
    for b, tr in enumerate(usable):
        xy = tr.coords
        d = np.diff(xy, axis=0)
        ln = np.hypot(d[:, 0], d[:, 1])
        hd = np.where(ln >= MIN_STEP_LENGTH, np.arctan2(d[:, 1], d[:, 0]), np.nan)
        n_floored += int(np.sum(ln < MIN_STEP_LENGTH))
        ln = np.maximum(ln, MIN_STEP_LENGTH)
        tn = np.full(len(ln), np.nan)
        for i in range(1, len(ln)):
            if not (math.isnan(hd[i]) or math.isnan(hd[i - 1])):
                a = math.fmod(hd[i] - hd[i - 1] + math.pi, 2.0 * math.pi)
                if a <= 0.0:
                    a += 2.0 * math.pi
                tn[i] = a - math.pi
        starts.append(xy[:-1])
        ends.append(xy[1:])
        t_end.append(tr.times[1:])
        lengths.append(ln)
        headings.append(hd)
        turns.append(tn)
        burst_ix.append(np.full(len(ln), b, dtype=np.int64))
        offsets.append(offsets[-1] + len(ln))

    end_arr = np.vstack(ends)
    covariates: Dict[str, np.ndarray] = {}
    if grids:
        values, in_extent, _ = extract_many(grids, end_arr)
        if not np.all(in_extent):
            bad = int(np.flatnonzero(~in_extent)[0])
            raise OutOfExtent(
                f"step {bad}: endpoint ({end_arr[bad, 0]}, {end_arr[bad, 1]}) "
                "outside raster extent"
            )
        covariates = values

    if n_floored:
        logger.warning("floored %d zero-length step(s) to %g", n_floored,
                       MIN_STEP_LENGTH)
    return StepSeries(
        track_id=track_id,
        start=np.vstack(starts),
        end=end_arr,
        t_end=np.concatenate(t_end),
        length=np.concatenate(lengths),
        heading=np.concatenate(headings),
        turn=np.concatenate(turns),
        burst=np.concatenate(burst_ix),
        offsets=np.array(offsets, dtype=np.int64),
        covariates=covariates,
        n_floored=n_floored,
    )
