"""Hidden Markov movement models with covariate-driven dynamics.

States carry a gamma step-length and a von Mises turn-angle distribution.
Transition probabilities follow a multinomial logit per row whose diagonal
coefficients are fixed at zero, so off-diagonal logits are log odds against
staying put; covariates may enter those logits and (separately) the log of
each state's mean step length. The likelihood is evaluated by the scaled
forward recursion over bursts (see :mod:`movehab.kernels`).

Fitting maximizes over an unconstrained working vector (logs of positive
parameters, free logits for transitions and the initial distribution) from
many random restarts. Reported states are always relabeled in ascending
order of baseline mean step length, so "state 1" is the slowest regime in
every output.
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
from .errors import (AllRestartsFailed, InvalidObservation, MissingCovariate,
                     MovehabError, NonStochasticInput, TooFewSteps)
from .kernels import forward_loglik, smoothing_probs, viterbi_path
from .optimize import OptimizeConfig, optimize_mle, standard_errors
from .rng import Rng
from .track import StepSeries, Track

logger = logging.getLogger(__name__)

# working parameters are rejected outside this box; it is far wider than any
# plausible optimum and keeps exp() finite
_WORKING_BOUND = 60.0


@dataclass(frozen=True)
class HmmModel:
    """A fitted or hand-built hidden Markov movement model.

    ``step[i]`` and ``angle[i]`` are state ``i + 1``'s distributions at
    covariates zero; ``obs_mean_slopes[i]`` shifts state ``i + 1``'s log
    mean step length per unit of each observation covariate.
    ``trans_coefs[i, j]`` holds the intercept and covariate slopes of the
    ``i+1 -> j+1`` logit; diagonal entries are structurally zero.
    """

    n_states: int
    step: Tuple[GammaParams, ...]
    angle: Tuple[VonMisesParams, ...]
    trans_coefs: np.ndarray
    trans_covariates: Tuple[str, ...] = ()
    delta: Optional[np.ndarray] = None
    delta_mode: str = "free"
    obs_covariates: Tuple[str, ...] = ()
    obs_mean_slopes: Optional[np.ndarray] = None

    def __post_init__(self):
        N = self.n_states
        if N < 1:
            raise ValueError("need at least one state")
        if len(self.step) != N or len(self.angle) != N:
            raise ValueError("need one step and angle distribution per state")
        tc = np.asarray(self.trans_coefs, dtype=np.float64)
        kt = 1 + len(self.trans_covariates)
        if tc.shape != (N, N, kt):
            raise ValueError(
                f"trans_coefs must have shape {(N, N, kt)}, got {tc.shape}"
            )
        if np.any(tc[np.arange(N), np.arange(N), :] != 0.0):
            raise ValueError("diagonal transition coefficients must be zero")
        object.__setattr__(self, "trans_coefs", tc)
        if self.delta_mode not in ("free", "stationary"):
            raise ValueError("delta_mode must be 'free' or 'stationary'")
        if self.delta is not None:
            d = np.asarray(self.delta, dtype=np.float64)
            if d.shape != (N,) or np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
                raise ValueError("delta must be a probability vector over states")
            object.__setattr__(self, "delta", d)
        elif self.delta_mode == "free":
            object.__setattr__(self, "delta", np.full(N, 1.0 / N))
        if self.obs_mean_slopes is not None:
            sl = np.asarray(self.obs_mean_slopes, dtype=np.float64)
            if sl.shape != (N, len(self.obs_covariates)):
                raise ValueError("obs_mean_slopes must be (n_states, n_obs_covs)")
            object.__setattr__(self, "obs_mean_slopes", sl)
        elif self.obs_covariates:
            object.__setattr__(
                self, "obs_mean_slopes",
                np.zeros((N, len(self.obs_covariates))),
            )


def transition_matrix(model: HmmModel, x: Mapping[str, float]) -> np.ndarray:
    """Row-stochastic transition matrix at covariate values ``x``."""
    xv = np.empty(1 + len(model.trans_covariates))
    xv[0] = 1.0
    for k, name in enumerate(model.trans_covariates):
        if name not in x:
            raise MissingCovariate(f"transition covariate {name!r} not supplied")
        xv[1 + k] = float(x[name])
    eta = model.trans_coefs @ xv
    eta -= eta.max(axis=1, keepdims=True)
    g = np.exp(eta)
    return g / g.sum(axis=1, keepdims=True)


def obs_params_at(
    model: HmmModel, state: int, x: Optional[Mapping[str, float]] = None
) -> Tuple[GammaParams, VonMisesParams]:
    """State's step and angle distributions at covariate values ``x``.

    ``state`` is 1-based. Covariates shift the log mean step length; the
    step sd and the angle distribution are covariate-free.
    """
    if not 1 <= state <= model.n_states:
        raise ValueError(f"state must be in 1..{model.n_states}, got {state}")
    base = model.step[state - 1]
    if not model.obs_covariates:
        return base, model.angle[state - 1]
    shift = 0.0
    for k, name in enumerate(model.obs_covariates):
        if x is None or name not in x:
            raise MissingCovariate(f"observation covariate {name!r} not supplied")
        shift += float(model.obs_mean_slopes[state - 1, k]) * float(x[name])
    mean = base.mean * math.exp(shift)
    return GammaParams(mean=mean, sd=base.sd), model.angle[state - 1]


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Solves ``pi P = pi`` with the normalization row; raises
    NonStochasticInput for anything that is not a transition matrix.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NonStochasticInput(f"matrix must be square, got {P.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < -1e-12):
        raise NonStochasticInput("matrix has negative or non-finite entries")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise NonStochasticInput("rows must sum to 1 within 1e-9")
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


class ParamLayout:
    """Mapping between the working vector and named model parameters.

    Working order: log step means, observation slopes (state-major), log
    step sds, log kappas, transition coefficients (row-major over
    off-diagonal cells, intercept first), free delta logits (relative to
    state 1).
    """

    def __init__(
        self,
        n_states: int,
        trans_covariates: Sequence[str] = (),
        obs_covariates: Sequence[str] = (),
        delta_mode: str = "free",
    ):
        self.n_states = n_states
        self.trans_covariates = tuple(trans_covariates)
        self.obs_covariates = tuple(obs_covariates)
        self.delta_mode = delta_mode
        N = n_states
        kt = 1 + len(self.trans_covariates)
        ko = len(self.obs_covariates)
        names: List[str] = []
        names += [f"mean.s{i + 1}" for i in range(N)]
        for i in range(N):
            names += [f"mean.s{i + 1}:{c}" for c in self.obs_covariates]
        names += [f"sd.s{i + 1}" for i in range(N)]
        names += [f"kappa.s{i + 1}" for i in range(N)]
        oi, oj = [], []
        for i in range(N):
            for j in range(N):
                if i != j:
                    oi.append(i)
                    oj.append(j)
                    names.append(f"trans.s{i + 1}->s{j + 1}")
                    names += [
                        f"trans.s{i + 1}->s{j + 1}:{c}"
                        for c in self.trans_covariates
                    ]
        self._oi = np.array(oi, dtype=np.intp)
        self._oj = np.array(oj, dtype=np.intp)
        if delta_mode == "free":
            names += [f"delta.s{j + 2}" for j in range(N - 1)]
        self.names = names
        self._kt = kt
        self._ko = ko
        n_off = N * (N - 1)
        self.sl_mean = slice(0, N)
        self.sl_obs = slice(N, N + N * ko)
        self.sl_sd = slice(N + N * ko, 2 * N + N * ko)
        self.sl_kappa = slice(2 * N + N * ko, 3 * N + N * ko)
        self.sl_trans = slice(3 * N + N * ko, 3 * N + N * ko + n_off * kt)
        start_d = 3 * N + N * ko + n_off * kt
        n_delta = (N - 1) if delta_mode == "free" else 0
        self.sl_delta = slice(start_d, start_d + n_delta)
        self.size = start_d + n_delta

    def unpack(self, theta: np.ndarray):
        N = self.n_states
        log_mean = theta[self.sl_mean]
        obs_slopes = theta[self.sl_obs].reshape(N, self._ko)
        log_sd = theta[self.sl_sd]
        log_kappa = theta[self.sl_kappa]
        trans = np.zeros((N, N, self._kt))
        if N > 1:
            trans[self._oi, self._oj] = theta[self.sl_trans].reshape(-1, self._kt)
        delta_logits = theta[self.sl_delta]
        return log_mean, obs_slopes, log_sd, log_kappa, trans, delta_logits

    def pack(self, model: HmmModel) -> np.ndarray:
        if (model.n_states != self.n_states
                or model.trans_covariates != self.trans_covariates
                or model.obs_covariates != self.obs_covariates
                or model.delta_mode != self.delta_mode):
            raise ValueError("model does not match this layout")
        theta = np.zeros(self.size)
        with np.errstate(divide="ignore"):
            theta[self.sl_mean] = [math.log(p.mean) for p in model.step]
            theta[self.sl_sd] = [math.log(p.sd) for p in model.step]
            theta[self.sl_kappa] = [
                math.log(p.kappa) if p.kappa > 0 else -745.0 for p in model.angle
            ]
        if self._ko:
            theta[self.sl_obs] = model.obs_mean_slopes.reshape(-1)
        if self.n_states > 1:
            theta[self.sl_trans] = model.trans_coefs[self._oi, self._oj].reshape(-1)
        if self.delta_mode == "free" and self.n_states > 1:
            d = np.maximum(model.delta, 1e-300)
            theta[self.sl_delta] = np.log(d[1:]) - math.log(d[0])
        return theta

    def to_model(self, theta: np.ndarray) -> HmmModel:
        log_mean, obs_slopes, log_sd, log_kappa, trans, dlog = self.unpack(theta)
        step = tuple(
            GammaParams(mean=math.exp(log_mean[i]), sd=math.exp(log_sd[i]))
            for i in range(self.n_states)
        )
        angle = tuple(
            VonMisesParams(mu=0.0, kappa=math.exp(log_kappa[i]))
            for i in range(self.n_states)
        )
        if self.delta_mode == "free":
            z = np.concatenate(([0.0], dlog))
            z -= z.max()
            d = np.exp(z)
            delta = d / d.sum()
        else:
            delta = None
        return HmmModel(
            n_states=self.n_states,
            step=step,
            angle=angle,
            trans_coefs=trans,
            trans_covariates=self.trans_covariates,
            delta=delta,
            delta_mode=self.delta_mode,
            obs_covariates=self.obs_covariates,
            obs_mean_slopes=obs_slopes if self._ko else None,
        )

    def permute(self, theta: np.ndarray, order: np.ndarray) -> np.ndarray:
        """Relabel states so new state ``a`` is old state ``order[a]``."""
        N = self.n_states
        log_mean, obs_slopes, log_sd, log_kappa, trans, dlog = self.unpack(theta)
        out = np.empty_like(theta)
        out[self.sl_mean] = log_mean[order]
        if self._ko:
            out[self.sl_obs] = obs_slopes[order].reshape(-1)
        out[self.sl_sd] = log_sd[order]
        out[self.sl_kappa] = log_kappa[order]
        if N > 1:
            newtrans = trans[np.ix_(order, order)]
            out[self.sl_trans] = newtrans[self._oi, self._oj].reshape(-1)
        if self.delta_mode == "free" and N > 1:
            z = np.concatenate(([0.0], dlog))
            z = z[order]
            out[self.sl_delta] = z[1:] - z[0]
        return out


@dataclass
class _HmmData:
    """Arrays extracted once from a step series."""

    length: np.ndarray
    ln_length: np.ndarray
    cos_turn: np.ndarray
    turn_ok: np.ndarray
    X1_trans: Optional[np.ndarray]
    X_obs: Optional[np.ndarray]
    offsets: np.ndarray

    @property
    def n(self) -> int:
        return self.length.size


def _prepare(
    steps: StepSeries,
    trans_covariates: Sequence[str],
    obs_covariates: Sequence[str],
) -> _HmmData:
    lengths = np.asarray(steps.length, dtype=np.float64)
    if np.any(~np.isfinite(lengths)) or np.any(lengths <= 0.0):
        bad = int(np.flatnonzero(~(np.isfinite(lengths) & (lengths > 0)))[0])
        raise InvalidObservation(f"step {bad} has length outside (0, inf)")
    turn = np.asarray(steps.turn, dtype=np.float64)
    turn_ok = ~np.isnan(turn)
    cos_turn = np.where(turn_ok, np.cos(np.where(turn_ok, turn, 0.0)), 0.0)

    def grab(names: Sequence[str]) -> Optional[np.ndarray]:
        if not names:
            return None
        cols = []
        for nm in names:
            if nm not in steps.covariates:
                raise MissingCovariate(f"step series lacks covariate {nm!r}")
            col = np.asarray(steps.covariates[nm], dtype=np.float64)
            if np.any(np.isnan(col)):
                bad = int(np.flatnonzero(np.isnan(col))[0])
                raise MissingCovariate(
                    f"covariate {nm!r} is missing at step {bad}; the chain "
                    "cannot skip steps"
                )
            cols.append(col)
        return np.column_stack(cols)

    Xt = grab(trans_covariates)
    if Xt is not None:
        Xt = np.column_stack((np.ones(len(lengths)), Xt))
    Xo = grab(obs_covariates)
    return _HmmData(
        length=lengths,
        ln_length=np.log(lengths),
        cos_turn=cos_turn,
        turn_ok=turn_ok.astype(np.float64),
        X1_trans=Xt,
        X_obs=Xo,
        offsets=np.asarray(steps.offsets, dtype=np.int64),
    )


# above this the plain gamma log density cancels catastrophically
_SHAPE_STABLE = 1e6


def _stable_gamma_logpdf(l, lnl, mean, shape):
    """Gamma log density regrouped for enormous shapes.

    The plain form pairs ``shape*log(rate)`` against ``gammaln(shape)``, two
    terms of size shape*log(shape) whose difference is O(log shape); once a
    collapsing state drives sd toward the working bound, shape explodes and
    the cancellation noise can exceed the true value by many orders,
    handing the restart selection an absurd winner. Expanding gammaln by
    Stirling and grouping around log(l/mean) keeps every term small.
    """
    u = l / mean
    corr = 1.0 / (12.0 * shape) - 1.0 / (360.0 * shape ** 3)
    return (
        shape * (np.log(u) - u + 1.0)
        - lnl
        + 0.5 * np.log(shape)
        - 0.5 * LOG_TWO_PI
        - corr
    )


def _likelihood_parts(layout: ParamLayout, theta: np.ndarray, data: _HmmData):
    """(logp, trans, deltas) for the kernel calls; None when invalid."""
    # saturate instead of failing so the surface stays finite and flat at
    # the working bound (softmax logits genuinely converge out there)
    theta = np.clip(theta, -_WORKING_BOUND, _WORKING_BOUND)
    log_mean, obs_slopes, log_sd, log_kappa, trans_c, dlog = layout.unpack(theta)
    N = layout.n_states
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        sd = np.exp(log_sd)
        kappa = np.exp(log_kappa)
        l = data.length[:, None]
        lnl = data.ln_length[:, None]
        if data.X_obs is None:
            mean = np.exp(log_mean)
            shape = (mean / sd) ** 2
            rate = mean / sd ** 2
            lenpart = (
                (shape * np.log(rate) - scipy.special.gammaln(shape))[None, :]
                + lnl * (shape - 1.0)[None, :]
                - l * rate[None, :]
            )
            big = shape > _SHAPE_STABLE
            if np.any(big):
                lenpart[:, big] = _stable_gamma_logpdf(
                    l, lnl, mean[big], shape[big]
                )
        else:
            lmean = log_mean[None, :] + data.X_obs @ obs_slopes.T
            mean = np.exp(lmean)
            shape = (mean / sd[None, :]) ** 2
            rate = mean / (sd ** 2)[None, :]
            lenpart = (
                shape * np.log(rate)
                - scipy.special.gammaln(shape)
                + lnl * (shape - 1.0)
                - l * rate
            )
            big = shape > _SHAPE_STABLE
            if np.any(big):
                lenpart[big] = _stable_gamma_logpdf(l, lnl, mean, shape)[big]
        # kappa*cos_turn - log_i0(kappa) only stays bounded when both use
        # the same kappa; log_i0 is accurate for any finite argument
        logi0 = np.array([log_i0(float(k)) for k in kappa])
        angpart = data.turn_ok[:, None] * (
            kappa[None, :] * data.cos_turn[:, None]
            - (LOG_TWO_PI + logi0)[None, :]
        )
        logp = lenpart + angpart
        if not np.all(np.isfinite(logp)):
            return None

        if data.X1_trans is None:
            eta = trans_c[:, :, 0].copy()
            eta -= eta.max(axis=1, keepdims=True)
            g = np.exp(eta)
            trans = g / g.sum(axis=1, keepdims=True)
        else:
            eta = np.einsum("ijk,tk->tij", trans_c, data.X1_trans)
            eta -= eta.max(axis=2, keepdims=True)
            g = np.exp(eta)
            trans = g / g.sum(axis=2, keepdims=True)
        if not np.all(np.isfinite(trans)):
            return None

        B = data.offsets.size - 1
        if layout.delta_mode == "free":
            z = np.concatenate(([0.0], dlog))
            z -= z.max()
            d = np.exp(z)
            d /= d.sum()
            deltas = np.broadcast_to(d, (B, N)).copy()
        else:
            deltas = np.empty((B, N))
            for b in range(B):
                first = trans if trans.ndim == 2 else trans[data.offsets[b]]
                deltas[b] = stationary_distribution(first)
    return logp, trans, deltas


def hmm_loglik(model: HmmModel, steps: StepSeries) -> float:
    """Log likelihood of a step series under a model."""
    layout = ParamLayout(
        model.n_states, model.trans_covariates, model.obs_covariates,
        model.delta_mode,
    )
    data = _prepare(steps, model.trans_covariates, model.obs_covariates)
    parts = _likelihood_parts(layout, layout.pack(model), data)
    if parts is None:
        return -math.inf
    return float(forward_loglik(*parts, data.offsets))


def viterbi_decode(model: HmmModel, steps: StepSeries) -> List[np.ndarray]:
    """Most likely state labels (1-based) per burst; ties to lower state."""
    layout = ParamLayout(
        model.n_states, model.trans_covariates, model.obs_covariates,
        model.delta_mode,
    )
    data = _prepare(steps, model.trans_covariates, model.obs_covariates)
    parts = _likelihood_parts(layout, layout.pack(model), data)
    if parts is None:
        raise MovehabError("model parameters are outside the working range")
    path = np.asarray(viterbi_path(*parts, data.offsets)) + 1
    return [
        path[data.offsets[b]:data.offsets[b + 1]]
        for b in range(data.offsets.size - 1)
    ]


def state_probabilities(model: HmmModel, steps: StepSeries) -> np.ndarray:
    """Posterior state membership probabilities, shape (n_steps, n_states)."""
    layout = ParamLayout(
        model.n_states, model.trans_covariates, model.obs_covariates,
        model.delta_mode,
    )
    data = _prepare(steps, model.trans_covariates, model.obs_covariates)
    parts = _likelihood_parts(layout, layout.pack(model), data)
    if parts is None:
        raise MovehabError("model parameters are outside the working range")
    return np.asarray(smoothing_probs(*parts, data.offsets))


@dataclass(frozen=True)
class HmmFitConfig:
    """Restart and optimizer settings for :func:`fit_hmm`."""

    restarts: int = 25
    gtol: float = 1e-3
    simplex_max_evals: int = 250
    polish_max_iter: int = 150
    max_evals: int = 20000


@dataclass
class HmmFit:
    """A fitted model plus working-scale uncertainty."""

    model: HmmModel
    layout: ParamLayout
    params: np.ndarray
    param_names: List[str]
    se: np.ndarray
    se_valid: np.ndarray
    cov: np.ndarray
    loglik: float
    n_obs: int
    n_bursts: int
    converged: bool
    se_ok: bool
    restart_logliks: List[float]
    state_order: Tuple[int, ...]
    covariate_means: Dict[str, float] = field(default_factory=dict)


def fit_hmm(
    steps: StepSeries,
    n_states: int,
    rng: Rng,
    transition_covariates: Sequence[str] = (),
    obs_covariates: Sequence[str] = (),
    delta_mode: str = "free",
    config: Optional[HmmFitConfig] = None,
) -> HmmFit:
    """Fit by maximum likelihood over random restarts.

    Each restart perturbs a quantile-based initialization (restart 0 is the
    unperturbed one) and runs the simplex + polish optimizer; the best
    finite likelihood wins, earliest restart on ties. States in the result
    are ordered by ascending baseline mean step length.
    """
    cfg = config or HmmFitConfig()
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if cfg.restarts < 1:
        raise ValueError("need at least one restart")
    data = _prepare(steps, transition_covariates, obs_covariates)
    T = data.n
    if T < 10 or T < 3 * n_states:
        raise TooFewSteps(
            f"{T} steps is too few for a {n_states}-state model"
        )
    layout = ParamLayout(n_states, transition_covariates, obs_covariates,
                         delta_mode)

    def objective(theta: np.ndarray) -> float:
        parts = _likelihood_parts(layout, theta, data)
        if parts is None:
            return -math.inf
        return float(forward_loglik(*parts, data.offsets))

    N = n_states
    ko = len(layout.obs_covariates)
    kt = len(layout.trans_covariates)
    qs = np.quantile(data.length, [(i + 0.5) / N for i in range(N)])
    qs = np.maximum(qs, 1e-12)

    opt_cfg = OptimizeConfig(
        gtol=cfg.gtol,
        simplex_max_evals=cfg.simplex_max_evals,
        polish_max_iter=cfg.polish_max_iter,
        max_evals=cfg.max_evals,
    )

    best = None
    best_r = -1
    restart_logliks: List[float] = []
    last_error = "no restarts ran"
    for r in range(cfg.restarts):
        sub = rng.child(f"restart-{r}")
        theta0 = np.zeros(layout.size)
        if r == 0:
            means0 = qs.copy()
            sds0 = 0.8 * qs
            kappas0 = np.full(N, 1.0)
            tr0 = np.full(N * (N - 1), -2.0)
            dl0 = np.zeros(max(N - 1, 0))
        else:
            means0 = qs * np.exp(np.array([0.4 * sub.normal() for _ in range(N)]))
            sds0 = means0 * np.array([0.5 + sub.uniform() for _ in range(N)])
            kappas0 = np.array([0.1 + 1.9 * sub.uniform() for _ in range(N)])
            tr0 = np.array([-3.0 + 2.0 * sub.uniform() for _ in range(N * (N - 1))])
            dl0 = np.array([0.5 * sub.normal() for _ in range(max(N - 1, 0))])
        theta0[layout.sl_mean] = np.log(means0)
        theta0[layout.sl_sd] = np.log(sds0)
        theta0[layout.sl_kappa] = np.log(kappas0)
        if N > 1:
            block = np.zeros((N * (N - 1), 1 + kt))
            block[:, 0] = tr0
            if kt and r > 0:
                block[:, 1:] = 0.3 * np.array(
                    [sub.normal() for _ in range(N * (N - 1) * kt)]
                ).reshape(-1, kt)
            theta0[layout.sl_trans] = block.reshape(-1)
        if ko and r > 0:
            theta0[layout.sl_obs] = 0.1 * np.array(
                [sub.normal() for _ in range(N * ko)]
            )
        if delta_mode == "free" and N > 1:
            theta0[layout.sl_delta] = dl0
        try:
            res = optimize_mle(objective, theta0, opt_cfg)
        except (MovehabError, FloatingPointError, np.linalg.LinAlgError) as exc:
            last_error = f"restart {r}: {type(exc).__name__}: {exc}"
            logger.debug("restart %d failed: %s", r, exc)
            restart_logliks.append(-math.inf)
            continue
        restart_logliks.append(res.loglik)
        if not math.isfinite(res.loglik):
            last_error = f"restart {r}: non-finite likelihood"
            continue
        if best is None or res.loglik > best.loglik:
            best = res
            best_r = r
    if best is None:
        raise AllRestartsFailed(last_error)
    logger.info("best restart %d of %d, loglik %.6f", best_r, cfg.restarts,
                best.loglik)

    log_mean, *_ = layout.unpack(best.argmax)
    order = np.argsort(np.exp(log_mean), kind="stable")
    theta_hat = np.clip(layout.permute(best.argmax, order),
                        -_WORKING_BOUND, _WORKING_BOUND)
    loglik = objective(theta_hat)

    # saturated parameters sit on a flat likelihood shelf; exclude them
    # from the curvature so the rest keep usable standard errors
    pegged = np.abs(theta_hat) >= _WORKING_BOUND - 1e-6
    free_ix = np.flatnonzero(~pegged)
    se = np.full(theta_hat.size, np.nan)
    valid = np.zeros(theta_hat.size, dtype=bool)
    cov = np.zeros((theta_hat.size, theta_hat.size))
    se_ok = False
    if pegged.any():
        logger.warning(
            "%d parameter(s) saturated at the working bound; "
            "their standard errors are undefined", int(pegged.sum()),
        )
    if free_ix.size:
        def obj_free(tf: np.ndarray) -> float:
            th = theta_hat.copy()
            th[free_ix] = tf
            return objective(th)

        ses = standard_errors(obj_free, theta_hat[free_ix])
        se[free_ix] = ses.se
        valid[free_ix] = ses.valid
        cov[np.ix_(free_ix, free_ix)] = ses.cov
        # the covariance feeds stationary-probability products, so what
        # matters is whether the transition block is identified
        se_ok = bool(np.all(valid[layout.sl_trans]))

    covariate_means: Dict[str, float] = {}
    for nm in set(transition_covariates) | set(obs_covariates):
        covariate_means[nm] = float(np.mean(steps.covariates[nm]))

    return HmmFit(
        model=layout.to_model(theta_hat),
        layout=layout,
        params=theta_hat,
        param_names=list(layout.names),
        se=se,
        se_valid=valid,
        cov=cov,
        loglik=float(loglik),
        n_obs=T,
        n_bursts=int(data.offsets.size - 1),
        converged=bool(best.converged),
        se_ok=se_ok,
        restart_logliks=restart_logliks,
        state_order=tuple(int(o) for o in order),
        covariate_means=covariate_means,
    )


def simulate_hmm(
    model: HmmModel,
    n_steps: int,
    rng: Rng,
    covariate_series: Optional[Mapping[str, np.ndarray]] = None,
    start_xy: Tuple[float, float] = (0.0, 0.0),
    start_heading: float = 0.0,
    interval_s: int = 86400,
    t0: int = 0,
    track_id: str = "sim",
) -> Tuple[Track, np.ndarray]:
    """Simulate a track of ``n_steps`` steps from the model.

    Returns the track (``n_steps + 1`` locations) and the 1-based state
    label of each step. ``covariate_series`` must supply one length-
    ``n_steps`` array per model covariate; the transition out of step ``t``
    uses the covariates of step ``t``, matching the fitting convention.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    needed = set(model.trans_covariates) | set(model.obs_covariates)
    series: Dict[str, np.ndarray] = {}
    for nm in needed:
        if covariate_series is None or nm not in covariate_series:
            raise MissingCovariate(f"simulation needs covariate series {nm!r}")
        arr = np.asarray(covariate_series[nm], dtype=np.float64)
        if arr.shape != (n_steps,):
            raise ValueError(f"covariate series {nm!r} must have length {n_steps}")
        series[nm] = arr

    N = model.n_states
    if model.delta_mode == "stationary":
        x0 = {nm: float(series[nm][0]) for nm in model.trans_covariates}
        delta = stationary_distribution(transition_matrix(model, x0))
    else:
        delta = model.delta

    def draw_categorical(p: np.ndarray) -> int:
        u = rng.uniform()
        acc = 0.0
        for i in range(N - 1):
            acc += p[i]
            if u < acc:
                return i
        return N - 1

    states = np.empty(n_steps, dtype=np.int64)
    coords = np.empty((n_steps + 1, 2))
    coords[0] = start_xy
    heading = start_heading
    s = draw_categorical(np.asarray(delta))
    for t in range(n_steps):
        states[t] = s + 1
        x_t = {nm: float(series[nm][t]) for nm in needed}
        gp, vp = obs_params_at(model, s + 1, x_t)
        l = sample_gamma(gp, rng)
        theta = sample_vonmises(vp, rng)
        heading = heading + theta
        coords[t + 1, 0] = coords[t, 0] + l * math.cos(heading)
        coords[t + 1, 1] = coords[t, 1] + l * math.sin(heading)
        if t < n_steps - 1:
            xt = {nm: float(series[nm][t]) for nm in model.trans_covariates}
            P = transition_matrix(model, xt)
            s = draw_categorical(P[s])
    times = t0 + interval_s * np.arange(n_steps + 1, dtype=np.int64)
    track = Track(id=track_id, times=times, coords=coords)
    return track, states
