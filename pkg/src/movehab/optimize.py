"""Maximum-likelihood driver shared by every model in the package.

All fits maximize a log likelihood ``f(theta)`` with the same two-stage
strategy: a derivative-free simplex search to locate the basin, then a
quasi-Newton (BFGS) polish using central-difference gradients. The driver
tracks the best point ever evaluated, so the result never regresses below
the starting value even when a stage misbehaves.

Gradient steps follow ``h_i = max(1e-6, 1e-6 * |x_i|)`` and Hessian steps
``h_i = 1e-4 * max(1, |x_i|)``; both are plain central differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import NonFiniteAtInit

logger = logging.getLogger(__name__)

# value handed to the minimizer where the objective is undefined; large but
# finite so line searches can back off instead of propagating inf
_BAD_VALUE = 1e300


@dataclass(frozen=True)
class OptimizeConfig:
    """Tuning knobs for :func:`optimize_mle`.

    Attributes
    ----------
    gtol : float
        Infinity-norm gradient threshold below which the fit is declared
        converged.
    simplex_max_evals : int or None
        Evaluation budget for the simplex stage; ``None`` means 200 per
        dimension.
    polish_max_iter : int
        Iteration cap for the BFGS polish.
    max_evals : int
        Hard cap on objective evaluations across both stages.
    """

    gtol: float = 1e-8
    simplex_max_evals: Optional[int] = None
    polish_max_iter: int = 400
    max_evals: int = 200_000


@dataclass
class OptResult:
    """Outcome of one maximization."""

    argmax: np.ndarray
    loglik: float
    converged: bool
    n_evals: int
    grad_norm: float


class _BudgetExceeded(Exception):
    pass


class _Tracker:
    """Counts evaluations and remembers the best finite point."""

    def __init__(self, objective: Callable[[np.ndarray], float], max_evals: int):
        self._objective = objective
        self._max_evals = max_evals
        self.n_evals = 0
        self.best_x: Optional[np.ndarray] = None
        self.best_f = -math.inf

    def neg(self, x: np.ndarray) -> float:
        if self.n_evals >= self._max_evals:
            raise _BudgetExceeded
        self.n_evals += 1
        f = self._objective(np.asarray(x, dtype=float))
        if not math.isfinite(f):
            return _BAD_VALUE
        if f > self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=float, copy=True)
        return -f


def central_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray
) -> np.ndarray:
    """Central-difference gradient with per-coordinate steps."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def optimize_mle(
    objective: Callable[[np.ndarray], float],
    init,
    config: Optional[OptimizeConfig] = None,
) -> OptResult:
    """Maximize ``objective`` from ``init``.

    Parameters
    ----------
    objective : callable
        Log likelihood to maximize. May return ``-inf``/NaN away from the
        start; must be finite at ``init``.
    init : array_like
        Starting point.
    config : OptimizeConfig, optional

    Returns
    -------
    OptResult
        ``loglik`` is never below ``objective(init)``. ``converged`` is true
        when the central-difference gradient at the returned point has
        infinity norm at most ``config.gtol``.

    Raises
    ------
    NonFiniteAtInit
        If the objective is NaN or infinite at the starting point.
    """
    cfg = config or OptimizeConfig()
    x0 = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    n = x0.size

    tracker = _Tracker(objective, cfg.max_evals)
    f0 = -tracker.neg(x0)
    if f0 >= _BAD_VALUE:
        raise NonFiniteAtInit(f"objective not finite at init {x0!r}")

    simplex_budget = cfg.simplex_max_evals
    if simplex_budget is None:
        simplex_budget = 200 * n

    if simplex_budget > 0:
        try:
            scipy.optimize.minimize(
                tracker.neg,
                x0,
                method="Nelder-Mead",
                options={
                    "maxfev": simplex_budget,
                    "xatol": 1e-7,
                    "fatol": 1e-11,
                },
            )
        except _BudgetExceeded:
            pass

    x1 = tracker.best_x if tracker.best_x is not None else x0

    def neg_grad(x: np.ndarray) -> np.ndarray:
        return -central_diff_grad(lambda y: -tracker.neg(y), x)

    if cfg.polish_max_iter > 0:
        try:
            scipy.optimize.minimize(
                tracker.neg,
                x1,
                method="BFGS",
                jac=neg_grad,
                options={"gtol": cfg.gtol, "maxiter": cfg.polish_max_iter},
            )
        except _BudgetExceeded:
            pass

    x_best = tracker.best_x if tracker.best_x is not None else x0
    f_best = tracker.best_f if tracker.best_x is not None else f0

    grad = central_diff_grad(objective, x_best)
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    converged = bool(np.isfinite(grad_norm) and grad_norm <= cfg.gtol)
    if not converged:
        logger.debug(
            "optimizer stopped with grad inf-norm %.3g > gtol %.3g", grad_norm, cfg.gtol
        )
    return OptResult(
        argmax=x_best,
        loglik=float(f_best),
        converged=converged,
        n_evals=tracker.n_evals,
        grad_norm=grad_norm,
    )


@dataclass
class SeResult:
    """Standard errors from a finite-difference Hessian."""

    se: np.ndarray
    valid: np.ndarray
    cov: np.ndarray
    neg_definite: bool


def hessian(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central-difference Hessian, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / (h[i] * h[i])
        for j in range(i + 1, n):
            xpp = x.copy()
            xpm = x.copy()
            xmp = x.copy()
            xmm = x.copy()
            xpp[[i, j]] += [h[i], h[j]]
            xpm[i] += h[i]
            xpm[j] -= h[j]
            xmp[i] -= h[i]
            xmp[j] += h[j]
            xmm[[i, j]] -= [h[i], h[j]]
            H[i, j] = H[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (
                4.0 * h[i] * h[j]
            )
    return H


def standard_errors(
    objective: Callable[[np.ndarray], float], argmax: np.ndarray
) -> SeResult:
    """Asymptotic standard errors at a maximum.

    The covariance is the inverse negative Hessian. Entries are flagged
    invalid when the Hessian is not negative definite (the point is not a
    proper interior maximum) or a diagonal term is non-positive.
    """
    x = np.atleast_1d(np.asarray(argmax, dtype=float))
    H = hessian(objective, x)
    if not np.all(np.isfinite(H)):
        # objective fell off a cliff within the difference stencil; there
        # is no usable curvature information here
        return SeResult(se=np.full(x.size, np.nan),
                        valid=np.zeros(x.size, dtype=bool),
                        cov=np.full((x.size, x.size), np.nan),
                        neg_definite=False)
    neg = -H
    neg_definite = True
    try:
        c, low = scipy.linalg.cho_factor(neg)
        cov = scipy.linalg.cho_solve((c, low), np.eye(x.size))
        diag = np.diag(cov)
        valid = (diag > 0.0) & np.isfinite(diag)
        se = np.where(valid, np.sqrt(np.abs(diag)), np.nan)
        return SeResult(se=se, valid=np.asarray(valid, dtype=bool), cov=cov,
                        neg_definite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        neg_definite = False
    # not negative definite: invert over the informative eigenspace and
    # flag parameters that load on flat or unstable directions
    w, V = np.linalg.eigh(neg)
    wmax = float(w.max(initial=0.0))
    if wmax <= 0.0:
        return SeResult(se=np.full(x.size, np.nan),
                        valid=np.zeros(x.size, dtype=bool),
                        cov=np.full((x.size, x.size), np.nan),
                        neg_definite=False)
    keep = w > 1e-8 * wmax
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    cov = (V * inv_w) @ V.T
    flat_load = (V[:, ~keep] ** 2).sum(axis=1)
    diag = np.diag(cov)
    valid = (diag > 0.0) & np.isfinite(diag) & (flat_load < 1e-8)
    se = np.where(valid, np.sqrt(np.abs(diag)), np.nan)
    return SeResult(se=se, valid=np.asarray(valid, dtype=bool), cov=cov,
                    neg_definite=neg_definite)
