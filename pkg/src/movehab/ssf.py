"""Integrated step selection.

Each observed step is compared against control steps drawn from a
tentative movement kernel (gamma lengths, von Mises turns), and a
conditional logistic model scores habitat at the endpoints together with
the movement terms ``l``, ``ln_l`` and ``cos_theta``. Because the tentative
kernel is only a sampling device, the fitted movement coefficients update
it: ``shape += b_lnl`` (plus any covariate interaction), ``rate -= b_l``,
``kappa += b_cos``. The selection part and the updated kernel together
define the fitted step density.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.special

from .distributions import (LOG_TWO_PI, GammaParams, VonMisesParams, log_i0,
                            sample_gamma, sample_vonmises)
from .errors import (ExtentExhausted, InvalidUpdatedKernel, MissingCovariate,
                     SeparationDetected, SingularDesign, TooFewSteps,
                     UnknownCovariate)
from .geodata import RasterGrid, check_shared_extent
from .optimize import OptimizeConfig, optimize_mle
from .results import FitResult
from .rng import Rng
from .track import StepSeries

logger = logging.getLogger(__name__)

MOVEMENT_TERMS = ("l", "ln_l", "cos_theta")

_SEPARATION_BOUND = 50.0
# per-control redraw budget before the control is dropped
_CONTROL_MAX_TRIES = 100
_SD_FLOOR_FRACTION = 1e-6
_KAPPA_CEILING = 1e4


@dataclass(frozen=True)
class MovementKernel:
    """Gamma step-length and von Mises turn-angle pair."""

    step: GammaParams
    angle: VonMisesParams
    flags: Tuple[str, ...] = ()


def fit_tentative_kernel(steps: StepSeries, min_angles: int = 10) -> MovementKernel:
    """Fit the tentative kernel to observed steps by maximum likelihood.

    Lengths use every step; angles use steps with a defined turn. Degenerate
    data pin a parameter at its working bound and flag it
    (``step_sd_floor``, ``angle_kappa_ceiling``) instead of failing.
    """
    lengths = steps.length
    angles = steps.turn[~np.isnan(steps.turn)]
    if angles.size < min_angles:
        raise TooFewSteps(
            f"need at least {min_angles} steps with defined turns, "
            f"got {angles.size}"
        )
    flags: List[str] = []

    n = lengths.size
    sum_l = float(np.sum(lengths))
    sum_ln = float(np.sum(np.log(lengths)))
    mean0 = sum_l / n
    sd_floor = _SD_FLOOR_FRACTION * mean0

    def gamma_ll(w: np.ndarray) -> float:
        mean = math.exp(w[0])
        sd = max(math.exp(w[1]), sd_floor)
        shape = (mean / sd) ** 2
        rate = mean / sd ** 2
        return (
            n * (shape * math.log(rate) - float(scipy.special.gammaln(shape)))
            + (shape - 1.0) * sum_ln
            - rate * sum_l
        )

    sd0 = float(np.std(lengths))
    if sd0 <= sd_floor:
        sd0 = 10.0 * sd_floor
    res = optimize_mle(
        gamma_ll,
        np.array([math.log(mean0), math.log(sd0)]),
        OptimizeConfig(gtol=1e-6),
    )
    mean_hat = math.exp(res.argmax[0])
    sd_hat = math.exp(res.argmax[1])
    if sd_hat <= sd_floor * (1.0 + 1e-9):
        sd_hat = sd_floor
        flags.append("step_sd_floor")
    step = GammaParams(mean=mean_hat, sd=sd_hat)

    na = angles.size
    sum_cos = float(np.sum(np.cos(angles)))

    def vm_ll(w: np.ndarray) -> float:
        kappa = min(math.exp(w[0]), _KAPPA_CEILING)
        return kappa * sum_cos - na * (LOG_TWO_PI + log_i0(kappa))

    rbar = sum_cos / na
    if rbar <= 0.0:
        k0 = 1e-3
    elif rbar < 0.53:
        k0 = rbar * (2.0 - rbar * rbar) / max(1.0 - rbar * rbar, 1e-6)
    else:
        k0 = min(1.0 / max(1.0 - rbar, 1e-6), 100.0)
    k0 = min(max(k0, 1e-3), 100.0)
    res_a = optimize_mle(vm_ll, np.array([math.log(k0)]), OptimizeConfig(gtol=1e-6))
    kappa_hat = min(math.exp(res_a.argmax[0]), _KAPPA_CEILING)
    if kappa_hat >= _KAPPA_CEILING * (1.0 - 1e-9):
        flags.append("angle_kappa_ceiling")
    if kappa_hat < 1e-8:
        kappa_hat = 0.0
    angle = VonMisesParams(mu=0.0, kappa=kappa_hat)
    return MovementKernel(step=step, angle=angle, flags=tuple(flags))


@dataclass
class StepTable:
    """Strata of one observed step plus its controls.

    Rows are grouped by stratum (``offsets`` delimiting), case row first.
    """

    stratum: np.ndarray
    case: np.ndarray
    length: np.ndarray
    cos_turn: np.ndarray
    covariates: Dict[str, np.ndarray]
    offsets: np.ndarray
    n_dropped_controls: int = 0
    n_dropped_strata: int = 0
    meta: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.case.size

    @property
    def n_strata(self) -> int:
        return self.offsets.size - 1

    def column(self, term: str) -> np.ndarray:
        """Resolve a model term to a column (supports ``<cov>:ln_l``)."""
        if term == "l":
            return self.length
        if term == "ln_l":
            return np.log(self.length)
        if term == "cos_theta":
            return self.cos_turn
        if term in self.covariates:
            return self.covariates[term]
        if term.endswith(":ln_l"):
            cov = term[:-5]
            if cov in self.covariates:
                return self.covariates[cov] * np.log(self.length)
        raise UnknownCovariate(f"step table has no term {term!r}")


def make_ssf_spec(
    covariate: str,
    with_movement_interaction: bool = False,
    known_covariates: Optional[Sequence[str]] = None,
) -> List[str]:
    """Term list for a step-selection fit.

    Base terms are the habitat covariate plus the movement adjustments
    ``l``, ``ln_l``, ``cos_theta``; the interaction variant appends
    ``<covariate>:ln_l`` so selection can depend on movement speed.
    """
    if known_covariates is not None and covariate not in known_covariates:
        raise UnknownCovariate(f"covariate {covariate!r} not available")
    terms = [covariate, "l", "ln_l", "cos_theta"]
    if with_movement_interaction:
        terms.append(f"{covariate}:ln_l")
    return terms


def generate_controls(
    steps: StepSeries,
    kernel: MovementKernel,
    n_controls: int,
    grids: Mapping[str, RasterGrid],
    rng: Rng,
) -> StepTable:
    """Build the conditional-logistic table from observed steps.

    Strata are observed steps with a defined turn angle and complete
    endpoint covariates. Controls share the stratum's start point and prior
    heading; draws landing out of extent or on nodata are redrawn up to
    100 times, then dropped. A stratum that loses every control raises
    ExtentExhausted; one that only loses its observed covariates is dropped
    with a warning.
    """
    if n_controls < 1:
        raise ValueError("n_controls must be >= 1")
    grids = dict(grids)
    check_shared_extent(grids)
    cov_names = list(grids)

    ok_turn = ~np.isnan(steps.turn)
    ok_cov = np.ones(len(steps), dtype=bool)
    for name in cov_names:
        if name not in steps.covariates:
            raise MissingCovariate(
                f"step series lacks covariate {name!r}; rebuild steps with "
                "the same rasters"
            )
        ok_cov &= ~np.isnan(steps.covariates[name])
    eligible = np.flatnonzero(ok_turn & ok_cov)
    n_dropped_strata = int(np.sum(ok_turn & ~ok_cov))
    if n_dropped_strata:
        logger.warning(
            "dropped %d stratum(s) whose observed endpoint lacks covariates",
            n_dropped_strata,
        )
    if eligible.size == 0:
        raise TooFewSteps("no step has both a turn angle and covariates")

    # locate each eligible step's previous step (same burst) for the heading
    stratum_col: List[int] = []
    case_col: List[int] = []
    length_col: List[float] = []
    cos_col: List[float] = []
    cov_cols: Dict[str, List[float]] = {k: [] for k in cov_names}
    offsets = [0]
    n_dropped_controls = 0

    for s_ix, i in enumerate(eligible):
        prev_heading = steps.heading[i - 1]
        start = steps.start[i]
        stratum_col.append(s_ix)
        case_col.append(1)
        length_col.append(float(steps.length[i]))
        cos_col.append(float(np.cos(steps.turn[i])))
        for k in cov_names:
            cov_cols[k].append(float(steps.covariates[k][i]))
        rows = 1
        for _ in range(n_controls):
            accepted = False
            for _ in range(_CONTROL_MAX_TRIES):
                l = sample_gamma(kernel.step, rng)
                theta = sample_vonmises(kernel.angle, rng)
                h = prev_heading + theta
                ex = float(start[0] + l * math.cos(h))
                ey = float(start[1] + l * math.sin(h))
                vals = {}
                bad = False
                for k, g in grids.items():
                    cx = (ex - g.xll) / g.cellsize
                    cy = (ey - g.yll) / g.cellsize
                    if cx < 0.0 or cy < 0.0 or cx >= g.ncols or cy >= g.nrows:
                        bad = True
                        break
                    v = float(g.values[g.nrows - 1 - int(cy), int(cx)])
                    if math.isnan(g.nodata):
                        if math.isnan(v):
                            bad = True
                            break
                    elif v == g.nodata:
                        bad = True
                        break
                    vals[k] = v
                if bad:
                    continue
                stratum_col.append(s_ix)
                case_col.append(0)
                length_col.append(max(l, 1e-300))
                cos_col.append(math.cos(theta))
                for k in cov_names:
                    cov_cols[k].append(vals[k])
                rows += 1
                accepted = True
                break
            if not accepted:
                n_dropped_controls += 1
        if rows == 1:
            raise ExtentExhausted(
                f"stratum {s_ix} (step {int(i)}) lost all {n_controls} controls"
            )
        offsets.append(offsets[-1] + rows)

    if n_dropped_controls:
        logger.warning("dropped %d control step(s) after %d redraw attempts",
                       n_dropped_controls, _CONTROL_MAX_TRIES)
    return StepTable(
        stratum=np.array(stratum_col, dtype=np.int64),
        case=np.array(case_col, dtype=np.int8),
        length=np.array(length_col),
        cos_turn=np.array(cos_col),
        covariates={k: np.array(v) for k, v in cov_cols.items()},
        offsets=np.array(offsets, dtype=np.int64),
        n_dropped_controls=n_dropped_controls,
        n_dropped_strata=n_dropped_strata,
        meta={"n_controls": str(n_controls)},
    )


def clogit_loglik_score_info(
    beta: np.ndarray, X: np.ndarray, case: np.ndarray, offsets: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Conditional-logistic log likelihood, score, and information.

    Strata must be contiguous row blocks with exactly one case row each.
    """
    eta = X @ beta
    starts = offsets[:-1]
    counts = np.diff(offsets)
    smax = np.maximum.reduceat(eta, starts)
    w = np.exp(eta - np.repeat(smax, counts))
    denom = np.add.reduceat(w, starts)
    p = w / np.repeat(denom, counts)
    ll = float(np.sum(eta[case == 1]) - np.sum(np.log(denom) + smax))
    pX = X * p[:, None]
    M = np.add.reduceat(pX, starts, axis=0)
    score = X[case == 1].sum(axis=0) - M.sum(axis=0)
    info = pX.T @ X - M.T @ M
    return ll, score, info


def fit_conditional_logistic(table: StepTable, terms: Sequence[str]) -> FitResult:
    """Newton-Raphson conditional logistic fit over strata.

    The analytic score and information come from the stratum softmax;
    standard errors are the inverse information at the optimum.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("need at least one term")
    if table.n_strata < 1:
        raise TooFewSteps("step table has no strata")
    counts = np.diff(table.offsets)
    if np.any(counts < 2):
        raise TooFewSteps("every stratum needs the observed step and a control")
    case_per = np.add.reduceat(table.case.astype(np.int64), table.offsets[:-1])
    if np.any(case_per != 1):
        raise ValueError("each stratum must contain exactly one case row")

    X = np.column_stack([table.column(t) for t in terms])
    case = np.asarray(table.case)
    offsets = np.asarray(table.offsets)

    _, _, info0 = clogit_loglik_score_info(np.zeros(X.shape[1]), X, case, offsets)
    # the raw eigenvalue spread mixes term units (meters vs indices), so
    # every test here must be unit-free: constancy is judged against each
    # column's own second moment, collinearity on the correlation form
    d = np.diag(info0)
    p0 = 1.0 / np.repeat(counts.astype(np.float64), counts)
    scale = (X * X * p0[:, None]).sum(axis=0)
    floor = 1e-12 * np.maximum(scale, np.finfo(np.float64).tiny)
    if np.any(~np.isfinite(d) | (d <= floor)):
        raise SingularDesign(
            "a term is constant within every stratum; conditional likelihood "
            "cannot identify it"
        )
    corr = info0 / np.sqrt(np.outer(d, d))
    eig = np.linalg.eigvalsh(corr)
    if eig[0] <= 1e-10:
        raise SingularDesign(
            "terms are collinear within strata; conditional likelihood "
            "cannot identify them"
        )

    beta = np.zeros(X.shape[1])
    ll, score, info = clogit_loglik_score_info(beta, X, case, offsets)
    converged = False
    for _ in range(100):
        if float(np.max(np.abs(score))) < 1e-10:
            converged = True
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularDesign("information matrix is singular") from None
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            ll_new, score_new, info_new = clogit_loglik_score_info(
                cand, X, case, offsets
            )
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        beta, ll, score, info = cand, ll_new, score_new, info_new
        if float(np.max(np.abs(beta))) > _SEPARATION_BOUND:
            raise SeparationDetected(
                "coefficients diverged; observed steps are separable from controls"
            )
    if not converged and float(np.max(np.abs(score))) >= 1e-6:
        raise SeparationDetected(
            f"no convergence after 100 iterations "
            f"(score norm {float(np.max(np.abs(score))):.3g})"
        )

    try:
        cov = np.linalg.inv(info)
        np.linalg.cholesky(info)
        diag = np.diag(cov)
        se = np.sqrt(np.where(diag > 0, diag, np.nan))
        valid = np.isfinite(se)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
        se = np.full(X.shape[1], np.nan)
        valid = np.zeros(X.shape[1], dtype=bool)

    case_rows = case == 1
    means = {t: float(np.mean(X[case_rows, j])) for j, t in enumerate(terms)}
    return FitResult(
        model_kind="ssf",
        term_names=terms,
        coefs=beta,
        se=se,
        se_valid=valid,
        cov=cov,
        loglik=ll,
        n_obs=table.n_strata,
        converged=converged or float(np.max(np.abs(score))) < 1e-6,
        covariate_means=means,
        meta={"n_rows": str(len(table))},
    )


def update_movement_kernel(
    kernel: MovementKernel,
    fit: FitResult,
    x: Optional[Mapping[str, float]] = None,
) -> MovementKernel:
    """Fold fitted movement coefficients back into the tentative kernel.

    ``x`` supplies covariate values for any ``<cov>:ln_l`` interaction
    terms (the shape update then depends on habitat). Raises
    InvalidUpdatedKernel naming the offending term when an updated
    parameter leaves its domain.
    """
    for t in MOVEMENT_TERMS:
        if t not in fit.term_names:
            raise UnknownCovariate(f"fit lacks movement term {t!r}")
    b_l = fit.coef("l")
    b_lnl = fit.coef("ln_l")
    b_cos = fit.coef("cos_theta")

    shape = kernel.step.shape + b_lnl
    for t in fit.term_names:
        if t.endswith(":ln_l"):
            cov = t[:-5]
            if x is None or cov not in x:
                raise MissingCovariate(
                    f"interaction {t!r} needs a value for {cov!r}"
                )
            shape += fit.coef(t) * float(x[cov])
    rate = kernel.step.rate - b_l
    kappa = kernel.angle.kappa + b_cos

    if not (shape > 0.0 and math.isfinite(shape)):
        raise InvalidUpdatedKernel(
            f"updated gamma shape {shape:.6g} <= 0 (term 'ln_l')"
        )
    if not (rate > 0.0 and math.isfinite(rate)):
        raise InvalidUpdatedKernel(
            f"updated gamma rate {rate:.6g} <= 0 (term 'l')"
        )
    if not (kappa >= 0.0 and math.isfinite(kappa)):
        raise InvalidUpdatedKernel(
            f"updated kappa {kappa:.6g} < 0 (term 'cos_theta')"
        )
    return MovementKernel(
        step=GammaParams.from_shape_rate(shape, rate),
        angle=VonMisesParams(mu=kernel.angle.mu, kappa=kappa),
        flags=kernel.flags,
    )
