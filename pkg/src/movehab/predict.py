"""Model products: relative selection curves, maps, and simulated use.

Everything here consumes fitted models and produces either curves (long
format: ``series,x,value,se``) or rasters aligned with the input
covariates. Uncertainty comes from the delta method with finite-difference
Jacobians (step ``1e-5 * max(1, |theta|)``).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (ExtentExhausted, InvalidUpdatedKernel, MissingCovariate,
                     MissingMovementContext, ParseError, UnknownCovariate)
from .geodata import RasterGrid, check_shared_extent
from .hmm import HmmFit, stationary_distribution, transition_matrix
from .kernels import (CHAIN_BAD_SHAPE, CHAIN_EXHAUSTED, CHAIN_OK, ssf_chain)
from .results import FitResult
from .rng import Rng
from .rsf import INTERCEPT
from .ssf import MOVEMENT_TERMS, MovementKernel

logger = logging.getLogger(__name__)

_DELTA_H = 1e-5


@dataclass(frozen=True)
class MovementContext:
    """Step-length context for predictions with movement interactions."""

    l: float

    def __post_init__(self):
        if not (self.l > 0.0 and math.isfinite(self.l)):
            raise ValueError(f"context step length must be > 0, got {self.l}")

    @property
    def ln_l(self) -> float:
        return math.log(self.l)


@dataclass
class CurveTable:
    """Long-format curves: one row per (series, x)."""

    series: List[str]
    x: np.ndarray
    value: np.ndarray
    se: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.se = np.asarray(self.se, dtype=np.float64)
        n = len(self.series)
        if not (self.x.shape == self.value.shape == self.se.shape == (n,)):
            raise ValueError("series, x, value, se must have equal length")
        for s in sorted(set(self.series)):
            xs = self.x[[i for i, t in enumerate(self.series) if t == s]]
            if np.any(np.diff(xs) <= 0.0):
                raise ValueError(f"series {s!r}: x values must be strictly increasing")

    @classmethod
    def concat(cls, tables: Sequence["CurveTable"]) -> "CurveTable":
        return cls(
            series=[s for t in tables for s in t.series],
            x=np.concatenate([t.x for t in tables]),
            value=np.concatenate([t.value for t in tables]),
            se=np.concatenate([t.se for t in tables]),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "x", "value", "se"])
            for i in range(len(self.series)):
                w.writerow([
                    self.series[i],
                    repr(float(self.x[i])),
                    repr(float(self.value[i])),
                    repr(float(self.se[i])),
                ])


def read_curve_csv(path) -> CurveTable:
    series: List[str] = []
    x: List[float] = []
    value: List[float] = []
    se: List[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["series", "x", "value", "se"]:
            raise ParseError(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 columns")
            try:
                series.append(row[0])
                x.append(float(row[1]))
                value.append(float(row[2]))
                se.append(float(row[3]))
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad number") from None
    return CurveTable(series=series, x=np.array(x), value=np.array(value),
                      se=np.array(se))


def _contrast_vector(
    fit: FitResult,
    x1: Mapping[str, float],
    x2: Mapping[str, float],
    movement_context: Optional[MovementContext],
) -> np.ndarray:
    g = np.zeros(len(fit.term_names))
    for i, term in enumerate(fit.term_names):
        if term == INTERCEPT or term in MOVEMENT_TERMS:
            continue
        if term.endswith(":ln_l"):
            cov = term[:-5]
            d = _cov_diff(cov, x1, x2)
            if d != 0.0:
                if movement_context is None:
                    raise MissingMovementContext(
                        f"term {term!r} needs a step-length context"
                    )
                g[i] = d * movement_context.ln_l
            continue
        g[i] = _cov_diff(term, x1, x2)
    return g


def _cov_diff(cov: str, x1, x2) -> float:
    if cov not in x1 or cov not in x2:
        raise MissingCovariate(f"both points need covariate {cov!r}")
    return float(x1[cov]) - float(x2[cov])


def log_rss(
    fit: FitResult,
    x1: Mapping[str, float],
    x2: Mapping[str, float],
    movement_context: Optional[MovementContext] = None,
) -> Tuple[float, float]:
    """Log relative selection strength between two locations.

    Movement terms cancel between locations, so only habitat terms and any
    ``<cov>:ln_l`` interaction (scaled by the context step length)
    contribute. Returns ``(value, se)``; the standard error is exactly zero
    when the points coincide and NaN when the fit's covariance is unusable.
    """
    g = _contrast_vector(fit, x1, x2, movement_context)
    value = float(g @ fit.coefs)
    if not np.any(g != 0.0):
        return value, 0.0
    needs = np.flatnonzero(g != 0.0)
    if not np.all(fit.se_valid[needs]):
        return value, math.nan
    var = float(g @ fit.cov @ g)
    return value, math.sqrt(max(var, 0.0))


def logrss_curve(
    fit: FitResult,
    covariate: str,
    values: Sequence[float],
    reference: Optional[float] = None,
    movement_context: Optional[MovementContext] = None,
    series: str = "logrss",
) -> CurveTable:
    """Log RSS of ``covariate = v`` against a fixed reference location.

    The reference (and all other habitat covariates, on both sides) sits at
    the fit's used-data means unless ``reference`` overrides it.
    """
    if covariate not in fit.term_names:
        raise UnknownCovariate(f"fit has no covariate {covariate!r}")
    base = {
        k: v for k, v in fit.covariate_means.items()
        if k not in MOVEMENT_TERMS and ":" not in k
    }
    if covariate not in base:
        raise UnknownCovariate(
            f"{covariate!r} is not a habitat covariate of this fit"
        )
    ref = float(base[covariate]) if reference is None else float(reference)
    x2 = dict(base)
    x2[covariate] = ref
    vals = [float(v) for v in values]
    out_v = np.empty(len(vals))
    out_se = np.empty(len(vals))
    for i, v in enumerate(vals):
        x1 = dict(base)
        x1[covariate] = v
        out_v[i], out_se[i] = log_rss(fit, x1, x2, movement_context)
    return CurveTable(series=[series] * len(vals), x=np.array(vals),
                      value=out_v, se=out_se)


def rsf_map(fit: FitResult, grids: Mapping[str, RasterGrid]) -> RasterGrid:
    """Normalized selection-weight surface, summing to 1 over valid cells."""
    grids = dict(grids)
    if not grids:
        raise MissingCovariate("need at least one covariate raster")
    check_shared_extent(grids)
    first = next(iter(grids.values()))
    eta = np.zeros((first.nrows, first.ncols))
    valid = np.ones((first.nrows, first.ncols), dtype=bool)
    used_any = False
    for i, term in enumerate(fit.term_names):
        if term == INTERCEPT:
            continue
        if term in MOVEMENT_TERMS or term.endswith(":ln_l"):
            raise UnknownCovariate(
                f"cannot map movement term {term!r}; maps need a pure habitat fit"
            )
        if term not in grids:
            raise MissingCovariate(f"no raster supplied for covariate {term!r}")
        g = grids[term]
        valid &= g.valid_mask
        eta += float(fit.coefs[i]) * np.where(g.valid_mask, g.values, 0.0)
        used_any = True
    if not used_any:
        raise MissingCovariate("fit has no habitat covariates to map")
    if not np.any(valid):
        raise MissingCovariate("no cell has complete covariates")
    m = eta[valid].max()
    w = np.where(valid, np.exp(eta - m), 0.0)
    total = w.sum()
    out = np.where(valid, w / total, first.nodata)
    return RasterGrid(
        ncols=first.ncols, nrows=first.nrows, xll=first.xll, yll=first.yll,
        cellsize=first.cellsize, nodata=first.nodata, values=out,
    )


def state_prob_curve(
    fit: HmmFit, covariate: str, values: Sequence[float]
) -> CurveTable:
    """Stationary state probabilities as one transition covariate varies.

    Other transition covariates sit at their data means. Standard errors
    propagate the working-parameter covariance through the softmax and the
    stationary solve by finite differences.
    """
    model = fit.model
    if model.trans_covariates and covariate not in model.trans_covariates:
        raise MissingCovariate(
            f"{covariate!r} is not a transition covariate of this model"
        )
    base = {c: fit.covariate_means.get(c, 0.0) for c in model.trans_covariates}
    vals = [float(v) for v in values]
    N = model.n_states
    theta = fit.params
    layout = fit.layout

    def pi_at(th: np.ndarray, xmap: Mapping[str, float]) -> np.ndarray:
        m = layout.to_model(th)
        return stationary_distribution(transition_matrix(m, xmap))

    curves_v = np.empty((len(vals), N))
    curves_se = np.empty((len(vals), N))
    for ix, v in enumerate(vals):
        xmap = dict(base)
        xmap[covariate] = v
        pi = pi_at(theta, xmap)
        curves_v[ix] = pi
        if not fit.se_ok:
            curves_se[ix] = np.nan
            continue
        J = np.empty((N, theta.size))
        for p in range(theta.size):
            h = _DELTA_H * max(1.0, abs(float(theta[p])))
            tp = theta.copy()
            tm = theta.copy()
            tp[p] += h
            tm[p] -= h
            J[:, p] = (pi_at(tp, xmap) - pi_at(tm, xmap)) / (2.0 * h)
        var = np.einsum("ip,pq,iq->i", J, fit.cov, J)
        curves_se[ix] = np.sqrt(np.maximum(var, 0.0))
    tables = []
    for i in range(N):
        tables.append(CurveTable(
            series=[f"state{i + 1}"] * len(vals),
            x=np.array(vals),
            value=curves_v[:, i].copy(),
            se=curves_se[:, i].copy(),
        ))
    return CurveTable.concat(tables)


def hmm_state_maps(
    fit: HmmFit, grids: Mapping[str, RasterGrid]
) -> List[RasterGrid]:
    """Per-state stationary probability surfaces (cell sums equal 1)."""
    model = fit.model
    grids = dict(grids)
    if not grids:
        raise MissingCovariate("need at least one raster to define the extent")
    check_shared_extent(grids)
    for c in model.trans_covariates:
        if c not in grids:
            raise MissingCovariate(f"no raster supplied for covariate {c!r}")
    # covariate-free models get flat maps masked by every supplied raster
    mask_names = list(model.trans_covariates) or list(grids)
    first = next(iter(grids.values()))
    valid = np.ones((first.nrows, first.ncols), dtype=bool)
    for c in mask_names:
        valid &= grids[c].valid_mask
    if not np.any(valid):
        raise MissingCovariate("no cell has complete covariates")
    rows, cols = np.nonzero(valid)
    M = rows.size
    X1 = np.ones((M, 1 + len(model.trans_covariates)))
    for k, c in enumerate(model.trans_covariates):
        X1[:, 1 + k] = grids[c].values[rows, cols]
    eta = np.einsum("ijk,mk->mij", model.trans_coefs, X1)
    eta -= eta.max(axis=2, keepdims=True)
    G = np.exp(eta)
    G /= G.sum(axis=2, keepdims=True)
    N = model.n_states
    A = np.transpose(G, (0, 2, 1)) - np.eye(N)[None, :, :]
    A[:, -1, :] = 1.0
    b = np.zeros((M, N, 1))
    b[:, -1, 0] = 1.0
    pi = np.linalg.solve(A, b)[:, :, 0]
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum(axis=1, keepdims=True)
    maps = []
    for i in range(N):
        vals = np.full((first.nrows, first.ncols), first.nodata, dtype=np.float64)
        vals[rows, cols] = pi[:, i]
        maps.append(RasterGrid(
            ncols=first.ncols, nrows=first.nrows, xll=first.xll,
            yll=first.yll, cellsize=first.cellsize, nodata=first.nodata,
            values=vals,
        ))
    return maps


def _ssf_chain_setup(
    fit: FitResult, kernel: MovementKernel, grids: Mapping[str, RasterGrid]
):
    """Shared preparation for path simulation: betas, stack, updated kernel."""
    grids = dict(grids)
    if not grids:
        raise MissingCovariate("need at least one covariate raster")
    check_shared_extent(grids)
    hab_terms = [
        t for t in fit.term_names
        if t != INTERCEPT and t not in MOVEMENT_TERMS and not t.endswith(":ln_l")
    ]
    for t in hab_terms:
        if t not in grids:
            raise MissingCovariate(f"no raster supplied for covariate {t!r}")
    for t in MOVEMENT_TERMS:
        if t not in fit.term_names:
            raise UnknownCovariate(f"fit lacks movement term {t!r}")
    b_l = fit.coef("l")
    b_lnl = fit.coef("ln_l")
    b_cos = fit.coef("cos_theta")
    rate = kernel.step.rate - b_l
    if not (rate > 0.0 and math.isfinite(rate)):
        raise InvalidUpdatedKernel(f"updated gamma rate {rate:.6g} <= 0 (term 'l')")
    kappa = kernel.angle.kappa + b_cos
    if not (kappa >= 0.0 and math.isfinite(kappa)):
        raise InvalidUpdatedKernel(
            f"updated kappa {kappa:.6g} < 0 (term 'cos_theta')"
        )
    shape0 = kernel.step.shape + b_lnl
    beta_hab = np.array([fit.coef(t) for t in hab_terms])
    beta_int = np.zeros(len(hab_terms))
    has_interaction = False
    for j, t in enumerate(hab_terms):
        name = f"{t}:ln_l"
        if name in fit.term_names:
            beta_int[j] = fit.coef(name)
            has_interaction = True
    for t in fit.term_names:
        if t.endswith(":ln_l") and t[:-5] not in hab_terms:
            raise MissingCovariate(
                f"interaction {t!r} references a covariate without a raster"
            )
    if not has_interaction and not (shape0 > 0.0):
        raise InvalidUpdatedKernel(
            f"updated gamma shape {shape0:.6g} <= 0 (term 'ln_l')"
        )
    first = next(iter(grids.values()))
    valid = np.ones((first.nrows, first.ncols), dtype=bool)
    for g in grids.values():
        valid &= g.valid_mask
    stack = np.stack([grids[t].values for t in hab_terms]) if hab_terms else \
        np.zeros((0, first.nrows, first.ncols))
    return first, stack, valid, shape0, rate, kappa, beta_hab, beta_int


def _default_start(first: RasterGrid, valid: np.ndarray) -> Tuple[float, float]:
    rows, cols = np.nonzero(valid)
    cx = first.xll + 0.5 * first.ncols * first.cellsize
    cy = first.yll + 0.5 * first.nrows * first.cellsize
    centers_x = first.xll + (cols + 0.5) * first.cellsize
    centers_y = first.yll + (first.nrows - rows - 0.5) * first.cellsize
    k = int(np.argmin((centers_x - cx) ** 2 + (centers_y - cy) ** 2))
    return float(centers_x[k]), float(centers_y[k])


def _raise_chain_error(status: int, step_count: int) -> None:
    if status == CHAIN_BAD_SHAPE:
        raise InvalidUpdatedKernel(
            f"selection-adjusted gamma shape became non-positive at step "
            f"{step_count}; the ln_l interaction is too strong for this surface"
        )
    if status == CHAIN_EXHAUSTED:
        raise ExtentExhausted(
            f"could not place a candidate step inside the extent at step "
            f"{step_count}"
        )


def simulate_ssf_path(
    fit: FitResult,
    kernel: MovementKernel,
    grids: Mapping[str, RasterGrid],
    n_steps: int,
    rng: Rng,
    n_candidates: int = 50,
    start: Optional[Tuple[float, float]] = None,
    start_heading: float = 0.0,
    max_tries: int = 1000,
) -> np.ndarray:
    """Simulate one path under the fitted step-selection dynamics.

    Returns ``n_steps + 1`` positions including the start. The candidate
    set per step has ``n_candidates`` draws from the selection-adjusted
    kernel; selection weights use the habitat terms and any ``ln_l``
    interactions.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    first, stack, valid, shape0, rate, kappa, bh, bi = _ssf_chain_setup(
        fit, kernel, grids
    )
    if start is None:
        start = _default_start(first, valid)
    else:
        r, c = first.cell_of(start[0], start[1])
        if not valid[r, c]:
            raise MissingCovariate("start point lies on a nodata cell")
    status, positions, counter, n_rej = ssf_chain(
        stack, valid.astype(np.uint8),
        first.xll, first.yll, first.cellsize,
        float(start[0]), float(start[1]), float(start_heading),
        float(shape0), float(rate), float(kappa),
        bh, bi, int(n_steps), int(n_candidates), int(max_tries),
        rng.key, rng.counter,
    )
    rng.counter = int(counter)
    if status != CHAIN_OK:
        _raise_chain_error(status, len(positions))
    if n_rej:
        logger.debug("redrew %d candidate step(s)", n_rej)
    return np.vstack(([start], np.asarray(positions)))


def ssud_map(
    fit: FitResult,
    kernel: MovementKernel,
    grids: Mapping[str, RasterGrid],
    rng: Rng,
    n_locations: int = 100_000,
    burn_in: int = 1000,
    n_candidates: int = 50,
    n_chains: int = 1,
    start: Optional[Tuple[float, float]] = None,
    max_tries: int = 1000,
) -> RasterGrid:
    """Simulated steady-state use: bin a long selection-weighted walk.

    Each chain gets its own child stream and its first ``burn_in``
    positions are discarded; the pooled remainder is binned and normalized
    to sum to 1 over valid cells.
    """
    if n_locations < 1:
        raise ValueError("n_locations must be >= 1")
    if burn_in < 0 or n_chains < 1:
        raise ValueError("burn_in must be >= 0 and n_chains >= 1")
    first, stack, valid, shape0, rate, kappa, bh, bi = _ssf_chain_setup(
        fit, kernel, grids
    )
    if start is None:
        start = _default_start(first, valid)
    counts = np.zeros((first.nrows, first.ncols), dtype=np.int64)
    vmask8 = valid.astype(np.uint8)
    per = [n_locations // n_chains] * n_chains
    for c in range(n_locations % n_chains):
        per[c] += 1
    for c in range(n_chains):
        if per[c] == 0:
            continue
        child = rng.child(f"chain-{c}")
        status, positions, _, n_rej = ssf_chain(
            stack, vmask8,
            first.xll, first.yll, first.cellsize,
            float(start[0]), float(start[1]), 0.0,
            float(shape0), float(rate), float(kappa),
            bh, bi, int(burn_in + per[c]), int(n_candidates), int(max_tries),
            child.key, child.counter,
        )
        if status != CHAIN_OK:
            _raise_chain_error(status, len(positions))
        kept = np.asarray(positions)[burn_in:]
        col = ((kept[:, 0] - first.xll) / first.cellsize).astype(np.int64)
        row = first.nrows - 1 - ((kept[:, 1] - first.yll) /
                                 first.cellsize).astype(np.int64)
        np.add.at(counts, (row, col), 1)
    total = counts.sum()
    out = np.where(valid, counts / total, first.nodata)
    return RasterGrid(
        ncols=first.ncols, nrows=first.nrows, xll=first.xll, yll=first.yll,
        cellsize=first.cellsize, nodata=first.nodata, values=out,
    )
