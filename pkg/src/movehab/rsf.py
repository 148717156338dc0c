"""Resource selection from use-available data.

Habitat selection is modeled as an exponential score over covariates,
``w(x) = exp(beta . x)``, estimated by logistic regression of observed
("used") locations against "available" locations sampled uniformly from
the animal's range polygon (the convex hull of its locations, optionally
buffered). The logistic intercept absorbs the sampling ratio and carries no
habitat meaning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import (ExtentExhausted, MissingCovariate, MovehabError,
                     SeparationDetected, SingularDesign)
from .geodata import (Polygon, RasterGrid, buffer_convex, check_shared_extent,
                      convex_hull, extract_many, sample_uniform_in_polygon)
from .optimize import standard_errors
from .results import FitResult
from .rng import Rng
from .track import Track

logger = logging.getLogger(__name__)

INTERCEPT = "intercept"

# diverging coefficient magnitude treated as complete separation
_SEPARATION_BOUND = 50.0
_MAX_SAMPLING_ROUNDS = 1000


@dataclass
class UseAvailTable:
    """Stacked used and available points with their covariates."""

    case: np.ndarray
    points: np.ndarray
    covariates: Dict[str, np.ndarray]
    weight: np.ndarray
    polygon: Polygon
    n_used: int
    n_available: int

    def __len__(self) -> int:
        return self.case.size


def build_use_avail(
    track: Track,
    grids: Mapping[str, RasterGrid],
    n_avail_per_used: int,
    rng: Rng,
    buffer_m: float = 0.0,
) -> UseAvailTable:
    """Sample availability and attach covariates.

    Available points are drawn uniformly from the (buffered) convex hull of
    the track, redrawing points that fall outside the raster extent or on
    nodata cells. Used locations must themselves be in-extent with complete
    covariates; anything else is an error naming the offending index.
    """
    if n_avail_per_used < 1:
        raise ValueError("n_avail_per_used must be >= 1")
    grids = dict(grids)
    if not grids:
        raise MissingCovariate("need at least one covariate raster")
    check_shared_extent(grids)

    hull = convex_hull(track.coords)
    if buffer_m > 0.0:
        hull = buffer_convex(hull, buffer_m)

    used_vals, in_extent, all_valid = extract_many(grids, track.coords)
    if not np.all(in_extent):
        bad = int(np.flatnonzero(~in_extent)[0])
        raise MissingCovariate(
            f"used location {bad} is outside the raster extent"
        )
    if not np.all(all_valid):
        bad = int(np.flatnonzero(~all_valid)[0])
        raise MissingCovariate(
            f"used location {bad} falls on a nodata cell"
        )

    n_used = len(track)
    n_avail = n_used * n_avail_per_used
    avail_pts = np.empty((n_avail, 2))
    avail_vals = {k: np.empty(n_avail) for k in grids}
    got = 0
    n_redrawn = 0
    for _ in range(_MAX_SAMPLING_ROUNDS):
        if got >= n_avail:
            break
        cand = sample_uniform_in_polygon(hull, n_avail - got, rng)
        vals, _, ok = extract_many(grids, cand)
        n_ok = int(np.sum(ok))
        n_redrawn += len(cand) - n_ok
        take = min(n_avail - got, n_ok)
        sel = np.flatnonzero(ok)[:take]
        avail_pts[got:got + take] = cand[sel]
        for k in grids:
            avail_vals[k][got:got + take] = vals[k][sel]
        got += take
    if got < n_avail:
        raise ExtentExhausted(
            f"could not place {n_avail} available points after "
            f"{_MAX_SAMPLING_ROUNDS} rounds ({got} placed)"
        )
    if n_redrawn:
        logger.info("redrew %d available point(s) on nodata or out of extent",
                    n_redrawn)

    case = np.concatenate(
        (np.ones(n_used, dtype=np.int8), np.zeros(n_avail, dtype=np.int8))
    )
    points = np.vstack((track.coords, avail_pts))
    covariates = {
        k: np.concatenate((used_vals[k], avail_vals[k])) for k in grids
    }
    return UseAvailTable(
        case=case,
        points=points,
        covariates=covariates,
        weight=np.ones(n_used + n_avail),
        polygon=hull,
        n_used=n_used,
        n_available=n_avail,
    )


def bernoulli_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray,
                     w: np.ndarray) -> float:
    """Weighted Bernoulli log likelihood with a logit link."""
    eta = X @ beta
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_logistic(table: UseAvailTable, include_intercept: bool = True) -> FitResult:
    """Weighted logistic regression by iteratively reweighted least squares.

    Newton steps with step halving; SeparationDetected when a coefficient
    runs past +/-50 (the likelihood has no interior maximum then), and
    SingularDesign when the design matrix is rank deficient.
    """
    names = ([INTERCEPT] if include_intercept else []) + list(table.covariates)
    cols = []
    if include_intercept:
        cols.append(np.ones(len(table)))
    for k in table.covariates:
        cols.append(np.asarray(table.covariates[k], dtype=np.float64))
    X = np.column_stack(cols)
    y = table.case.astype(np.float64)
    w = table.weight.astype(np.float64)

    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesign(
            f"design matrix has rank < {X.shape[1]} (collinear covariates)"
        )

    beta = np.zeros(X.shape[1])
    ll = bernoulli_loglik(beta, X, y, w)
    converged = False
    for _ in range(100):
        eta = np.clip(X @ beta, -30.0, 30.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        score = X.T @ (w * (y - mu))
        if float(np.max(np.abs(score))) < 1e-10:
            converged = True
            break
        wt = w * mu * (1.0 - mu)
        H = X.T @ (X * wt[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            raise SeparationDetected(
                "information matrix became singular during fitting"
            ) from None
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            ll_new = bernoulli_loglik(cand, X, y, w)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        ll = bernoulli_loglik(beta, X, y, w)
        if float(np.max(np.abs(beta))) > _SEPARATION_BOUND:
            raise SeparationDetected(
                "coefficients diverged; classes are separable"
            )
    score = X.T @ (w * (y - 1.0 / (1.0 + np.exp(-np.clip(X @ beta, -30, 30)))))
    if not converged and float(np.max(np.abs(score))) >= 1e-6:
        raise SeparationDetected(
            f"no convergence after 100 iterations "
            f"(score norm {float(np.max(np.abs(score))):.3g})"
        )

    ses = standard_errors(lambda b: bernoulli_loglik(b, X, y, w), beta)
    used = table.case == 1
    means = {k: float(np.mean(table.covariates[k][used]))
             for k in table.covariates}
    return FitResult(
        model_kind="rsf",
        term_names=names,
        coefs=beta,
        se=ses.se,
        se_valid=ses.valid,
        cov=ses.cov,
        loglik=ll,
        n_obs=len(table),
        converged=converged,
        covariate_means=means,
        meta={
            "n_used": str(table.n_used),
            "n_available": str(table.n_available),
        },
    )


def rsf_linear_predictor(fit: FitResult, x: Mapping[str, float]) -> float:
    """Selection score ``beta . x`` excluding the intercept."""
    total = 0.0
    for i, name in enumerate(fit.term_names):
        if name == INTERCEPT:
            continue
        if name not in x:
            raise MissingCovariate(f"no value supplied for covariate {name!r}")
        total += float(fit.coefs[i]) * float(x[name])
    return total


@dataclass
class ScanRow:
    """One availability-ratio fit in a stability scan."""

    ratio: int
    fit: Optional[FitResult] = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.fit is not None


def availability_stability_scan(
    track: Track,
    grids: Mapping[str, RasterGrid],
    ratios: Sequence[int],
    rng: Rng,
    buffer_m: float = 0.0,
) -> List[ScanRow]:
    """Refit the selection model over increasing availability ratios.

    Each ratio gets its own child stream, so adding ratios to the scan does
    not change earlier rows. Failed fits are recorded, not raised.
    """
    ratios = list(ratios)
    if not ratios or any(r < 1 for r in ratios):
        raise ValueError("ratios must be positive integers")
    if sorted(ratios) != ratios:
        raise ValueError("ratios must be increasing")
    rows: List[ScanRow] = []
    for ratio in ratios:
        child = rng.child(f"ratio-{ratio}")
        try:
            table = build_use_avail(track, grids, ratio, child, buffer_m=buffer_m)
            rows.append(ScanRow(ratio=ratio, fit=fit_logistic(table)))
        except MovehabError as exc:
            logger.warning("ratio %d failed: %s", ratio, exc)
            rows.append(ScanRow(ratio=ratio, error=f"{type(exc).__name__}: {exc}"))
    return rows
