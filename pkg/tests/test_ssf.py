"""Step-selection table construction and conditional logistic fitting.

Oracles: a from-scratch per-stratum softmax likelihood, statsmodels
ConditionalLogit, the one-stratum closed form, and finite differences.
"""

import math

import numpy as np
import pytest
from statsmodels.discrete.conditional_models import ConditionalLogit

from movehab import (
    ExtentExhausted, GammaParams, InvalidUpdatedKernel, MissingCovariate,
    Rng, SingularDesign, TooFewSteps, UnknownCovariate, VonMisesParams,
    fit_conditional_logistic, fit_tentative_kernel, generate_controls,
    make_ssf_spec, sample_gamma, sample_vonmises, to_steps,
    update_movement_kernel,
)
from movehab.ssf import MovementKernel, StepTable, clogit_loglik_score_info
from movehab.track import StepSeries

from conftest import make_grid, make_track, random_walk_track


def brute_clogit_ll(beta, X, case, offsets):
    """Independent stratum-by-stratum softmax evaluation."""
    total = 0.0
    for s in range(len(offsets) - 1):
        rows = slice(offsets[s], offsets[s + 1])
        eta = X[rows] @ beta
        case_eta = float(eta[np.asarray(case[rows]) == 1][0])
        total += case_eta - math.log(np.exp(eta).sum())
    return total


def random_table(rng, n_strata=40, n_controls=5, p=2, beta=None):
    """Synthetic table whose cases are drawn from the stratum softmax."""
    if beta is None:
        beta = np.array([0.9, -0.6][:p])
    rows_per = n_controls + 1
    X = rng.uniforms(n_strata * rows_per * p).reshape(n_strata * rows_per, p)
    case = np.zeros(n_strata * rows_per, dtype=np.int8)
    stratum = np.repeat(np.arange(n_strata), rows_per)
    offsets = np.arange(0, n_strata * rows_per + 1, rows_per)
    for s in range(n_strata):
        rows = slice(offsets[s], offsets[s + 1])
        eta = X[rows] @ beta
        pr = np.exp(eta - eta.max())
        pr /= pr.sum()
        u = rng.uniform()
        k = int(np.searchsorted(np.cumsum(pr), u))
        case[offsets[s] + min(k, rows_per - 1)] = 1
    # reorder so each stratum's case row comes first
    order = np.lexsort((1 - case, stratum))
    X, case, stratum = X[order], case[order], stratum[order]
    covs = {f"c{j}": X[:, j] for j in range(p)}
    length = np.full(len(case), 10.0)
    table = StepTable(
        stratum=stratum, case=case, length=length,
        cos_turn=np.zeros(len(case)), covariates=covs, offsets=offsets,
    )
    return table, [f"c{j}" for j in range(p)], beta, X


# ----------------------------------------------------------------- kernel

def test_tentative_kernel_recovers_parameters():
    gp = GammaParams(mean=500.0, sd=300.0)
    vp = VonMisesParams(mu=0.0, kappa=1.4)
    r = Rng(77)
    n = 4000
    length = np.array([sample_gamma(gp, r) for _ in range(n)])
    turn = np.array([sample_vonmises(vp, r) for _ in range(n)])
    turn[0] = np.nan
    steps = StepSeries(
        track_id="t", start=np.zeros((n, 2)), end=np.zeros((n, 2)),
        t_end=np.arange(n), length=length, heading=np.zeros(n), turn=turn,
        burst=np.zeros(n, dtype=np.int64), offsets=np.array([0, n]),
        covariates={},
    )
    k = fit_tentative_kernel(steps)
    assert k.step.mean == pytest.approx(gp.mean, rel=0.05)
    assert k.step.sd == pytest.approx(gp.sd, rel=0.08)
    assert k.angle.kappa == pytest.approx(vp.kappa, rel=0.08)
    assert k.flags == ()


def test_tentative_kernel_needs_enough_angles():
    n = 30
    steps = StepSeries(
        track_id="t", start=np.zeros((n, 2)), end=np.zeros((n, 2)),
        t_end=np.arange(n), length=np.full(n, 5.0), heading=np.zeros(n),
        turn=np.full(n, np.nan), burst=np.zeros(n, dtype=np.int64),
        offsets=np.array([0, n]), covariates={},
    )
    with pytest.raises(TooFewSteps):
        fit_tentative_kernel(steps)


def test_update_movement_kernel_hand_math():
    k = MovementKernel(step=GammaParams.from_shape_rate(2.0, 0.01),
                       angle=VonMisesParams(0.0, 1.0))
    fit = _fit_with(terms=["hab", "l", "ln_l", "cos_theta"],
                    coefs=[0.5, -0.002, 0.3, 0.4])
    up = update_movement_kernel(k, fit)
    assert up.step.shape == pytest.approx(2.3, rel=1e-12)
    assert up.step.rate == pytest.approx(0.012, rel=1e-12)
    assert up.angle.kappa == pytest.approx(1.4, rel=1e-12)


def test_update_movement_kernel_interaction_needs_x():
    k = MovementKernel(step=GammaParams.from_shape_rate(2.0, 0.01),
                       angle=VonMisesParams(0.0, 1.0))
    fit = _fit_with(terms=["hab", "l", "ln_l", "cos_theta", "hab:ln_l"],
                    coefs=[0.5, -0.002, 0.3, 0.4, 0.25])
    with pytest.raises(MissingCovariate):
        update_movement_kernel(k, fit)
    up = update_movement_kernel(k, fit, x={"hab": 2.0})
    assert up.step.shape == pytest.approx(2.0 + 0.3 + 0.5, rel=1e-12)


def test_update_movement_kernel_domain_errors():
    k = MovementKernel(step=GammaParams.from_shape_rate(2.0, 0.01),
                       angle=VonMisesParams(0.0, 0.2))
    bad_rate = _fit_with(terms=["hab", "l", "ln_l", "cos_theta"],
                         coefs=[0.0, 0.02, 0.0, 0.0])
    with pytest.raises(InvalidUpdatedKernel, match="rate"):
        update_movement_kernel(k, bad_rate)
    bad_shape = _fit_with(terms=["hab", "l", "ln_l", "cos_theta"],
                          coefs=[0.0, 0.0, -2.5, 0.0])
    with pytest.raises(InvalidUpdatedKernel, match="shape"):
        update_movement_kernel(k, bad_shape)
    bad_kappa = _fit_with(terms=["hab", "l", "ln_l", "cos_theta"],
                          coefs=[0.0, 0.0, 0.0, -0.5])
    with pytest.raises(InvalidUpdatedKernel, match="kappa"):
        update_movement_kernel(k, bad_kappa)
    missing = _fit_with(terms=["hab"], coefs=[0.1])
    with pytest.raises(UnknownCovariate):
        update_movement_kernel(k, missing)


def _fit_with(terms, coefs):
    from movehab import FitResult
    k = len(terms)
    return FitResult(
        model_kind="ssf", term_names=list(terms),
        coefs=np.asarray(coefs, float), se=np.full(k, 0.1),
        se_valid=np.ones(k, dtype=bool), cov=np.eye(k) * 0.01,
        loglik=-1.0, n_obs=10, converged=True,
    )


def test_make_ssf_spec():
    assert make_ssf_spec("hab") == ["hab", "l", "ln_l", "cos_theta"]
    assert make_ssf_spec("hab", with_movement_interaction=True) == [
        "hab", "l", "ln_l", "cos_theta", "hab:ln_l"]
    with pytest.raises(UnknownCovariate):
        make_ssf_spec("hab", known_covariates=["other"])


# --------------------------------------------------------------- controls

@pytest.fixture
def controls_setup(ramp_grids, rng):
    track = random_walk_track(rng.child("ssf"), 120)
    steps = to_steps([track], ramp_grids)
    kernel = fit_tentative_kernel(steps)
    return track, steps, kernel


def test_generate_controls_structure(controls_setup, ramp_grids):
    _, steps, kernel = controls_setup
    n_controls = 10
    table = generate_controls(steps, kernel, n_controls, ramp_grids, Rng(5))
    counts = np.diff(table.offsets)
    assert np.all(counts <= n_controls + 1)
    assert np.all(counts >= 2)
    n_eligible = int(np.sum(~np.isnan(steps.turn)))
    assert table.n_strata == n_eligible
    # case row leads each stratum and is unique within it
    for s in range(table.n_strata):
        rows = slice(table.offsets[s], table.offsets[s + 1])
        assert table.case[rows][0] == 1
        assert int(table.case[rows].sum()) == 1
    for k in ramp_grids:
        assert np.isfinite(table.covariates[k]).all()


def test_generate_controls_deterministic(controls_setup, ramp_grids):
    _, steps, kernel = controls_setup
    a = generate_controls(steps, kernel, 5, ramp_grids, Rng(6))
    b = generate_controls(steps, kernel, 5, ramp_grids, Rng(6))
    assert np.array_equal(a.length, b.length)
    assert np.array_equal(a.covariates["forage"], b.covariates["forage"])


def test_generate_controls_case_rows_match_observed(controls_setup, ramp_grids):
    _, steps, kernel = controls_setup
    table = generate_controls(steps, kernel, 3, ramp_grids, Rng(7))
    obs_ix = np.flatnonzero(~np.isnan(steps.turn))
    case_rows = table.case == 1
    assert np.allclose(table.length[case_rows], steps.length[obs_ix])
    assert np.allclose(table.cos_turn[case_rows], np.cos(steps.turn[obs_ix]))
    assert np.allclose(table.covariates["forage"][case_rows],
                       steps.covariates["forage"][obs_ix])


def test_generate_controls_exhausts_tiny_extent(ramp_grids):
    # a kernel that almost always leaves a 2-cell raster: controls dry up
    g = {"hab": make_grid([[1.0, 2.0]], cellsize=1.0)}
    tr = make_track([[0.5, 0.5], [1.5, 0.5], [0.5, 0.5], [1.5, 0.5]])
    steps = to_steps([tr], g)
    kernel = MovementKernel(step=GammaParams(mean=5000.0, sd=100.0),
                            angle=VonMisesParams(0.0, 0.1))
    with pytest.raises(ExtentExhausted):
        generate_controls(steps, kernel, 4, g, Rng(8))


def test_generate_controls_validates_args(controls_setup, ramp_grids):
    _, steps, kernel = controls_setup
    with pytest.raises(ValueError):
        generate_controls(steps, kernel, 0, ramp_grids, Rng(1))
    with pytest.raises(MissingCovariate):
        generate_controls(steps, kernel, 2, {"other": ramp_grids["forage"]},
                          Rng(1))


# ---------------------------------------------------------------- fitting

def test_clogit_loglik_matches_brute_force():
    table, terms, beta, X = random_table(Rng(91))
    for b in (np.zeros(2), beta, np.array([-1.5, 2.0])):
        ll, _, _ = clogit_loglik_score_info(b, X, table.case, table.offsets)
        assert ll == pytest.approx(
            brute_clogit_ll(b, X, table.case, table.offsets), rel=1e-12)


def test_clogit_invariant_to_stratum_constants():
    # conditional likelihood must ignore anything constant within strata
    table, terms, beta, X = random_table(Rng(92))
    ll0, s0, _ = clogit_loglik_score_info(beta, X, table.case, table.offsets)
    shift = np.repeat(Rng(5).uniforms(table.n_strata) * 100.0 - 50.0,
                      np.diff(table.offsets))
    X_shifted = X + shift[:, None]
    ll1, s1, _ = clogit_loglik_score_info(beta, X_shifted, table.case,
                                          table.offsets)
    assert ll1 == pytest.approx(ll0, rel=1e-13, abs=1e-10)


def test_clogit_score_matches_finite_differences():
    table, terms, beta, X = random_table(Rng(93))
    b = np.array([0.4, -0.2])
    _, score, info = clogit_loglik_score_info(b, X, table.case, table.offsets)
    h = 1e-6
    for j in range(2):
        bp, bm = b.copy(), b.copy()
        bp[j] += h
        bm[j] -= h
        lp, _, _ = clogit_loglik_score_info(bp, X, table.case, table.offsets)
        lm, _, _ = clogit_loglik_score_info(bm, X, table.case, table.offsets)
        assert score[j] == pytest.approx((lp - lm) / (2 * h), rel=1e-5)
        # information diagonal is minus the Hessian diagonal; the second
        # difference needs a larger step to beat cancellation noise
        h2 = 1e-3
        bp2, bm2 = b.copy(), b.copy()
        bp2[j] += h2
        bm2[j] -= h2
        lp2, _, _ = clogit_loglik_score_info(bp2, X, table.case, table.offsets)
        lm2, _, _ = clogit_loglik_score_info(bm2, X, table.case, table.offsets)
        l0, _, _ = clogit_loglik_score_info(b, X, table.case, table.offsets)
        assert info[j, j] == pytest.approx(-(lp2 - 2 * l0 + lm2) / h2 ** 2,
                                           rel=1e-3)


def test_single_stratum_closed_form():
    # one stratum, one covariate, case row x=1, controls x=0,0:
    # ll(b) = b - log(e^b + 2); maximum is unbounded -> separation, so use
    # two strata with opposing cases for a finite optimum instead
    X = np.array([[1.0], [0.0], [0.0], [0.0], [1.0], [1.0]])
    case = np.array([1, 0, 0, 1, 0, 0], dtype=np.int8)
    offsets = np.array([0, 3, 6])
    # ll(b) = [b - log(e^b + 2)] + [0 - log(1 + 2 e^b)]; maximize on a grid
    grid = np.linspace(-3, 3, 120001)
    vals = (grid - np.log(np.exp(grid) + 2.0)) - np.log(1.0 + 2.0 * np.exp(grid))
    want = grid[np.argmax(vals)]
    table = StepTable(
        stratum=np.repeat([0, 1], 3), case=case, length=np.full(6, 1.0),
        cos_turn=np.zeros(6), covariates={"z": X[:, 0]}, offsets=offsets,
    )
    fit = fit_conditional_logistic(table, ["z"])
    assert fit.coef("z") == pytest.approx(want, abs=1e-4)
    assert fit.n_obs == 2


def test_fit_clogit_matches_statsmodels():
    table, terms, beta, X = random_table(Rng(94), n_strata=80)
    fit = fit_conditional_logistic(table, terms)
    ref = ConditionalLogit(table.case.astype(float), X,
                           groups=table.stratum).fit(disp=0)
    # statsmodels stops with score ~4e-3 where Newton drives it to ~1e-14,
    # so the two agree to its looser tolerance and ours must be no worse
    assert fit.coefs == pytest.approx(ref.params, rel=2e-3, abs=1e-3)
    assert fit.se == pytest.approx(ref.bse, rel=1e-2)
    assert fit.loglik >= ref.llf - 1e-9
    assert fit.loglik == pytest.approx(ref.llf, rel=1e-7)
    _, score, _ = clogit_loglik_score_info(fit.coefs, X, table.case,
                                           table.offsets)
    assert float(np.max(np.abs(score))) < 1e-8


def test_fit_clogit_score_zero_at_optimum():
    table, terms, beta, X = random_table(Rng(95), n_strata=60)
    fit = fit_conditional_logistic(table, terms)
    _, score, _ = clogit_loglik_score_info(fit.coefs, X, table.case,
                                           table.offsets)
    assert float(np.max(np.abs(score))) < 1e-6


def test_fit_clogit_rejects_stratum_constant_term():
    table, terms, beta, X = random_table(Rng(96))
    with pytest.raises(SingularDesign):
        fit_conditional_logistic(table, ["l"])  # length constant everywhere


def test_fit_clogit_end_to_end_recovery(rng):
    # a fine-grained noise covariate varies within strata (a smooth ramp
    # would not), so a known selection rule is recoverable
    noise = {"forage": make_grid(Rng(55).uniforms(6400).reshape(80, 80) * 2.0)}
    track = random_walk_track(rng.child("sel"), 400)
    steps = to_steps([track], noise)
    kernel = fit_tentative_kernel(steps)
    table = generate_controls(steps, kernel, 10, noise, rng.child("ctl"))
    # re-deal the covariate by a known selection rule to create signal,
    # keeping the case row first as the table contract requires
    b_true = np.array([1.2])
    r = rng.child("case")
    Xh = table.covariates["forage"]
    for s in range(table.n_strata):
        rows = np.arange(table.offsets[s], table.offsets[s + 1])
        eta = b_true[0] * Xh[rows]
        pr = np.exp(eta - eta.max())
        pr /= pr.sum()
        pick = min(int(np.searchsorted(np.cumsum(pr), r.uniform())),
                   len(rows) - 1)
        Xh[rows[0]], Xh[rows[pick]] = Xh[rows[pick]], Xh[rows[0]]
    fit = fit_conditional_logistic(table, ["forage"])
    assert fit.coef("forage") == pytest.approx(1.2, abs=0.45)
    assert fit.se[0] < 0.25
