"""Hidden Markov model tests against brute-force enumeration.

The oracle enumerates every state sequence per burst and accumulates
sequence log weights with scipy densities, so it shares no code with the
scaled recursions it checks. Sequence spaces stay tiny (≤ 3^6) on purpose.
"""

import itertools
import math

import numpy as np
import pytest
import scipy.stats
from scipy.special import logsumexp

from movehab import (
    GammaParams,
    HmmFitConfig,
    HmmModel,
    InvalidObservation,
    MissingCovariate,
    NonStochasticInput,
    Rng,
    TooFewSteps,
    VonMisesParams,
    fit_hmm,
    hmm_loglik,
    obs_params_at,
    simulate_hmm,
    state_probabilities,
    stationary_distribution,
    transition_matrix,
    viterbi_decode,
)
from movehab.hmm import ParamLayout
from movehab.track import StepSeries


def make_series(lengths, turns, offsets=None, covariates=None):
    """Hand-build a StepSeries; geometry fields are placeholders."""
    lengths = np.asarray(lengths, dtype=np.float64)
    turns = np.asarray(turns, dtype=np.float64)
    n = lengths.size
    if offsets is None:
        offsets = [0, n]
    offsets = np.asarray(offsets, dtype=np.int64)
    burst = np.zeros(n, dtype=np.int64)
    for b in range(offsets.size - 1):
        burst[offsets[b]:offsets[b + 1]] = b
    return StepSeries(
        track_id="hand",
        start=np.zeros((n, 2)),
        end=np.zeros((n, 2)),
        t_end=np.arange(1, n + 1, dtype=np.int64) * 3600,
        length=lengths,
        heading=np.full(n, np.nan),
        turn=turns,
        burst=burst,
        offsets=offsets,
        covariates={k: np.asarray(v, dtype=np.float64)
                    for k, v in (covariates or {}).items()},
    )


# ---------------------------------------------------------------------------
# oracle: independent densities, softmax, and exhaustive sequence sums


def oracle_emissions(model, steps):
    """(T, N) log observation densities from scipy, not the package."""
    T = len(steps)
    N = model.n_states
    out = np.zeros((T, N))
    for t in range(T):
        for i in range(N):
            shift = 0.0
            for k, nm in enumerate(model.obs_covariates):
                shift += model.obs_mean_slopes[i, k] * steps.covariates[nm][t]
            m = model.step[i].mean * math.exp(shift)
            s = model.step[i].sd
            a = (m / s) ** 2
            out[t, i] = scipy.stats.gamma.logpdf(
                steps.length[t], a=a, scale=s * s / m
            )
            if not math.isnan(steps.turn[t]):
                kap = model.angle[i].kappa
                if kap == 0.0:
                    out[t, i] -= math.log(2.0 * math.pi)
                else:
                    out[t, i] += scipy.stats.vonmises.logpdf(
                        steps.turn[t], kap, loc=model.angle[i].mu
                    )
    return out


def oracle_trans_at(model, steps, t):
    """Transition matrix governing the move out of step t."""
    N = model.n_states
    xv = [1.0] + [float(steps.covariates[nm][t])
                  for nm in model.trans_covariates]
    P = np.empty((N, N))
    for i in range(N):
        eta = [sum(model.trans_coefs[i, j, k] * xv[k]
                   for k in range(len(xv))) for j in range(N)]
        mx = max(eta)
        w = [math.exp(e - mx) for e in eta]
        P[i] = np.array(w) / sum(w)
    return P


def oracle_stationary(P, iters=200000, tol=1e-15):
    """Stationary distribution by power iteration."""
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(iters):
        nxt = pi @ P
        if np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    return pi / pi.sum()


def oracle_burst_delta(model, steps, lo):
    if model.delta_mode == "free":
        return np.asarray(model.delta, dtype=np.float64)
    return oracle_stationary(oracle_trans_at(model, steps, lo))


def oracle_sequence_logw(model, steps):
    """Per burst: list of (sequence, log weight) over all sequences."""
    logp = oracle_emissions(model, steps)
    out = []
    off = steps.offsets
    for b in range(off.size - 1):
        lo, hi = int(off[b]), int(off[b + 1])
        delta = oracle_burst_delta(model, steps, lo)
        trans = [oracle_trans_at(model, steps, t) for t in range(lo, hi - 1)]
        rows = []
        for seq in itertools.product(range(model.n_states), repeat=hi - lo):
            lw = math.log(delta[seq[0]]) + logp[lo, seq[0]]
            for k in range(1, hi - lo):
                lw += math.log(trans[k - 1][seq[k - 1], seq[k]])
                lw += logp[lo + k, seq[k]]
            rows.append((seq, lw))
        out.append(rows)
    return out


def oracle_loglik(model, steps):
    total = 0.0
    for rows in oracle_sequence_logw(model, steps):
        total += logsumexp([lw for _, lw in rows])
    return total


def oracle_best_paths(model, steps):
    """Per burst: (argmax sequence, gap to the second-best value)."""
    out = []
    for rows in oracle_sequence_logw(model, steps):
        rows = sorted(rows, key=lambda r: -r[1])
        gap = rows[0][1] - rows[1][1]
        out.append((np.array(rows[0][0]) + 1, gap))
    return out


def oracle_posteriors(model, steps):
    """(T, N) smoothing probabilities from the enumeration."""
    T = len(steps)
    N = model.n_states
    post = np.zeros((T, N))
    off = steps.offsets
    for b, rows in enumerate(oracle_sequence_logw(model, steps)):
        lo = int(off[b])
        lws = np.array([lw for _, lw in rows])
        total = logsumexp(lws)
        for k in range(int(off[b + 1]) - lo):
            for j in range(N):
                sel = [lw for (seq, lw) in rows if seq[k] == j]
                if sel:
                    post[lo + k, j] = math.exp(logsumexp(sel) - total)
    return post


# ---------------------------------------------------------------------------
# hand models


def model_plain_2s():
    return HmmModel(
        n_states=2,
        step=(GammaParams(mean=120.0, sd=80.0), GammaParams(mean=600.0, sd=350.0)),
        angle=(VonMisesParams(0.0, 0.4), VonMisesParams(0.0, 1.6)),
        trans_coefs=np.array([[[0.0], [-1.2]], [[-0.8], [0.0]]]),
        delta=np.array([0.35, 0.65]),
    )


def steps_plain_2s():
    # one NaN turn mid-burst exercises the angle-term mask
    return make_series(
        [95.0, 310.0, 720.0, 150.0, 480.0, 1020.0, 60.0, 240.0],
        [np.nan, 0.4, -2.9, 1.1, np.nan, 0.2, -0.5, 2.4],
    )


def model_covariates_2s():
    return HmmModel(
        n_states=2,
        step=(GammaParams(mean=150.0, sd=90.0), GammaParams(mean=700.0, sd=300.0)),
        angle=(VonMisesParams(0.0, 0.2), VonMisesParams(0.0, 2.1)),
        trans_coefs=np.array(
            [[[0.0, 0.0], [-1.0, 0.8]], [[-1.4, -0.5], [0.0, 0.0]]]
        ),
        trans_covariates=("temp",),
        delta=np.array([0.5, 0.5]),
        obs_covariates=("snow",),
        obs_mean_slopes=np.array([[0.3], [-0.2]]),
    )


def steps_covariates_2s():
    return make_series(
        [130.0, 510.0, 880.0, 95.0, 260.0, 940.0, 410.0],
        [np.nan, 1.3, -0.2, np.nan, 2.8, -1.0, 0.6],
        offsets=[0, 4, 7],
        covariates={
            "temp": [0.5, -1.2, 2.0, 0.3, -0.7, 1.5, 0.0],
            "snow": [1.0, 0.0, -1.0, 2.0, 0.5, -0.5, 1.5],
        },
    )


def model_stationary_3s(with_covariate=False):
    if with_covariate:
        tc = np.array([
            [[0.0, 0.0], [-1.1, 0.6], [-2.0, -0.3]],
            [[-1.5, 0.4], [0.0, 0.0], [-1.0, 0.7]],
            [[-2.2, -0.8], [-0.9, 0.2], [0.0, 0.0]],
        ])
        names = ("temp",)
    else:
        tc = np.array([
            [[0.0], [-1.1], [-2.0]],
            [[-1.5], [0.0], [-1.0]],
            [[-2.2], [-0.9], [0.0]],
        ])
        names = ()
    return HmmModel(
        n_states=3,
        step=(
            GammaParams(mean=80.0, sd=50.0),
            GammaParams(mean=400.0, sd=220.0),
            GammaParams(mean=1500.0, sd=700.0),
        ),
        angle=(
            VonMisesParams(0.0, 0.3),
            VonMisesParams(0.0, 1.0),
            VonMisesParams(0.0, 2.6),
        ),
        trans_coefs=tc,
        trans_covariates=names,
        delta_mode="stationary",
    )


def steps_3s(two_bursts=False, with_covariate=False):
    covs = {"temp": [0.8, -0.4, 1.6, -1.1, 0.2, 0.9]} if with_covariate else None
    offs = [0, 3, 6] if two_bursts else None
    return make_series(
        [60.0, 350.0, 1800.0, 420.0, 95.0, 1100.0],
        [np.nan, 0.7, -0.1, np.nan if two_bursts else 2.2, -1.5, 0.9],
        offsets=offs,
        covariates=covs,
    )


def rel_err(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------------------
# forward likelihood vs enumeration


def test_forward_matches_enumeration_two_state():
    model = model_plain_2s()
    steps = steps_plain_2s()
    assert rel_err(hmm_loglik(model, steps), oracle_loglik(model, steps)) < 1e-10


def test_forward_matches_enumeration_with_covariates():
    model = model_covariates_2s()
    steps = steps_covariates_2s()
    assert rel_err(hmm_loglik(model, steps), oracle_loglik(model, steps)) < 1e-10


def test_forward_matches_enumeration_three_state_single_burst():
    model = model_stationary_3s()
    steps = steps_3s()
    assert rel_err(hmm_loglik(model, steps), oracle_loglik(model, steps)) < 1e-10


def test_forward_matches_enumeration_three_state_time_varying():
    model = model_stationary_3s(with_covariate=True)
    steps = steps_3s(two_bursts=True, with_covariate=True)
    assert rel_err(hmm_loglik(model, steps), oracle_loglik(model, steps)) < 1e-10


def test_degenerate_states_keep_the_likelihood_honest():
    # sd near zero (gamma shape ~ 1e42) and a huge kappa used to leak
    # cancellation garbage that could win restart selection
    model = HmmModel(
        n_states=2,
        step=(GammaParams(mean=95.0, sd=1e-20), GammaParams(mean=600.0, sd=350.0)),
        angle=(VonMisesParams(0.0, 1e25), VonMisesParams(0.0, 1.6)),
        trans_coefs=np.array([[[0.0], [-1.2]], [[-0.8], [0.0]]]),
        delta=np.array([0.5, 0.5]),
    )
    ll = hmm_loglik(model, steps_plain_2s())
    assert math.isfinite(ll)
    # one length sits exactly on the spike; that caps the possible gain
    assert ll < 100.0


def test_forward_burst_sum():
    # bursts are independent: total equals the sum of per-burst fits
    model = model_plain_2s()
    steps = steps_plain_2s()
    split = make_series(steps.length, steps.turn, offsets=[0, 5, 8])
    first = make_series(steps.length[:5], steps.turn[:5])
    second = make_series(steps.length[5:], steps.turn[5:])
    total = hmm_loglik(model, split)
    assert math.isclose(
        total,
        hmm_loglik(model, first) + hmm_loglik(model, second),
        rel_tol=1e-12,
    )


def test_splitting_a_burst_changes_the_likelihood():
    # the initial distribution replaces a transition row at the split, so
    # this is not an invariance for general models
    model = model_plain_2s()
    steps = steps_plain_2s()
    split = make_series(steps.length, steps.turn, offsets=[0, 4, 8])
    assert abs(hmm_loglik(model, split) - hmm_loglik(model, steps)) > 1e-6
    assert rel_err(hmm_loglik(model, split), oracle_loglik(model, split)) < 1e-10


def test_splitting_is_neutral_for_iid_states():
    # when every transition row equals delta the states are independent
    # draws and burst structure carries no information
    logit = math.log(0.7 / 0.3)
    model = HmmModel(
        n_states=2,
        step=(GammaParams(mean=120.0, sd=80.0), GammaParams(mean=600.0, sd=350.0)),
        angle=(VonMisesParams(0.0, 0.4), VonMisesParams(0.0, 1.6)),
        trans_coefs=np.array([[[0.0], [logit]], [[-logit], [0.0]]]),
        delta=np.array([0.3, 0.7]),
    )
    steps = steps_plain_2s()
    whole = hmm_loglik(model, steps)
    for offs in ([0, 4, 8], [0, 2, 5, 8]):
        split = make_series(steps.length, steps.turn, offsets=offs)
        assert math.isclose(hmm_loglik(model, split), whole, rel_tol=1e-12)


def test_free_delta_at_stationary_matches_stationary_mode():
    base = model_stationary_3s()
    steps = steps_3s()
    P = transition_matrix(base, {})
    free = HmmModel(
        n_states=3,
        step=base.step,
        angle=base.angle,
        trans_coefs=base.trans_coefs,
        delta=stationary_distribution(P),
        delta_mode="free",
    )
    assert math.isclose(hmm_loglik(free, steps), hmm_loglik(base, steps),
                        rel_tol=1e-12)


# ---------------------------------------------------------------------------
# decoding


@pytest.mark.parametrize("case", ["plain", "covariates", "three"])
def test_viterbi_matches_exhaustive_argmax(case):
    model, steps = {
        "plain": (model_plain_2s, steps_plain_2s),
        "covariates": (model_covariates_2s, steps_covariates_2s),
        "three": (model_stationary_3s, steps_3s),
    }[case]
    model, steps = model(), steps()
    decoded = viterbi_decode(model, steps)
    best = oracle_best_paths(model, steps)
    assert len(decoded) == len(best)
    for got, (want, gap) in zip(decoded, best):
        assert gap > 1e-9, "oracle maximum is not unique; bad test fixture"
        np.testing.assert_array_equal(got, want)


def test_viterbi_breaks_ties_toward_state_one():
    # identical states tie every sequence; the contract picks the lowest
    model = HmmModel(
        n_states=2,
        step=(GammaParams(mean=200.0, sd=100.0), GammaParams(mean=200.0, sd=100.0)),
        angle=(VonMisesParams(0.0, 0.5), VonMisesParams(0.0, 0.5)),
        trans_coefs=np.array([[[0.0], [0.0]], [[0.0], [0.0]]]),
        delta=np.array([0.5, 0.5]),
    )
    steps = steps_plain_2s()
    decoded = viterbi_decode(model, steps)
    np.testing.assert_array_equal(decoded[0], np.ones(len(steps), dtype=int))


def test_viterbi_returns_one_array_per_burst():
    model = model_covariates_2s()
    steps = steps_covariates_2s()
    decoded = viterbi_decode(model, steps)
    assert [len(d) for d in decoded] == [4, 3]
    assert all(d.min() >= 1 and d.max() <= 2 for d in decoded)


@pytest.mark.parametrize("case", ["plain", "covariates"])
def test_smoothing_matches_enumeration(case):
    model, steps = {
        "plain": (model_plain_2s, steps_plain_2s),
        "covariates": (model_covariates_2s, steps_covariates_2s),
    }[case]
    model, steps = model(), steps()
    got = state_probabilities(model, steps)
    want = oracle_posteriors(model, steps)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-11)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# transition structure


def test_transition_matrix_hand_case():
    model = model_covariates_2s()
    P = transition_matrix(model, {"temp": 2.0})
    # row 1: logits (0, -1.0 + 0.8 * 2) = (0, 0.6)
    e = math.exp(0.6)
    np.testing.assert_allclose(P[0], [1.0 / (1.0 + e), e / (1.0 + e)], rtol=1e-14)
    # row 2: logits (-1.4 - 0.5 * 2, 0) = (-2.4, 0)
    e = math.exp(-2.4)
    np.testing.assert_allclose(P[1], [e / (1.0 + e), 1.0 / (1.0 + e)], rtol=1e-14)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, rtol=1e-15)


def test_transition_matrix_requires_covariates():
    with pytest.raises(MissingCovariate, match="temp"):
        transition_matrix(model_covariates_2s(), {})


def test_obs_params_scale_the_mean_only():
    model = model_covariates_2s()
    gp, vp = obs_params_at(model, 1, {"snow": 2.0})
    assert math.isclose(gp.mean, 150.0 * math.exp(0.6), rel_tol=1e-15)
    assert gp.sd == 90.0
    assert vp.kappa == 0.2
    gp2, _ = obs_params_at(model, 2, {"snow": 2.0})
    assert math.isclose(gp2.mean, 700.0 * math.exp(-0.4), rel_tol=1e-15)


def test_obs_params_validation():
    model = model_covariates_2s()
    with pytest.raises(ValueError, match="state"):
        obs_params_at(model, 3, {"snow": 0.0})
    with pytest.raises(MissingCovariate, match="snow"):
        obs_params_at(model, 1, {})
    plain = model_plain_2s()
    gp, vp = obs_params_at(plain, 2)
    assert gp == plain.step[1] and vp == plain.angle[1]


def test_stationary_matches_high_matrix_power():
    rng = Rng(314)
    for n in (2, 3, 4):
        for _ in range(5):
            P = 0.1 + np.array(rng.uniforms(n * n)).reshape(n, n)
            P /= P.sum(axis=1, keepdims=True)
            pi = stationary_distribution(P)
            np.testing.assert_allclose(
                pi, np.linalg.matrix_power(P, 100)[0], atol=1e-10
            )
            np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
            assert math.isclose(pi.sum(), 1.0, rel_tol=1e-12)


def test_stationary_rejects_non_stochastic_input():
    with pytest.raises(NonStochasticInput, match="square"):
        stationary_distribution(np.ones((2, 3)))
    with pytest.raises(NonStochasticInput, match="negative or non-finite"):
        stationary_distribution(np.array([[1.5, -0.5], [0.5, 0.5]]))
    with pytest.raises(NonStochasticInput, match="sum to 1"):
        stationary_distribution(np.array([[0.6, 0.6], [0.5, 0.5]]))
    with pytest.raises(NonStochasticInput):
        stationary_distribution(np.array([[np.nan, 1.0], [0.5, 0.5]]))


def test_model_validation():
    good = model_plain_2s()
    with pytest.raises(ValueError, match="diagonal"):
        HmmModel(
            n_states=2, step=good.step, angle=good.angle,
            trans_coefs=np.array([[[0.2], [-1.2]], [[-0.8], [0.0]]]),
        )
    with pytest.raises(ValueError, match="shape"):
        HmmModel(
            n_states=2, step=good.step, angle=good.angle,
            trans_coefs=np.zeros((2, 2)),
        )
    with pytest.raises(ValueError, match="probability vector"):
        HmmModel(
            n_states=2, step=good.step, angle=good.angle,
            trans_coefs=np.zeros((2, 2, 1)), delta=np.array([0.9, 0.4]),
        )
    with pytest.raises(ValueError, match="delta_mode"):
        HmmModel(
            n_states=2, step=good.step, angle=good.angle,
            trans_coefs=np.zeros((2, 2, 1)), delta_mode="fixed",
        )
    with pytest.raises(ValueError, match="one step and angle"):
        HmmModel(
            n_states=3, step=good.step, angle=good.angle,
            trans_coefs=np.zeros((3, 3, 1)),
        )
    # defaults: uniform delta, zero slopes for declared obs covariates
    np.testing.assert_allclose(
        HmmModel(n_states=2, step=good.step, angle=good.angle,
                 trans_coefs=np.zeros((2, 2, 1))).delta,
        [0.5, 0.5],
    )
    m = HmmModel(n_states=2, step=good.step, angle=good.angle,
                 trans_coefs=np.zeros((2, 2, 1)), obs_covariates=("snow",))
    np.testing.assert_array_equal(m.obs_mean_slopes, np.zeros((2, 1)))


# ---------------------------------------------------------------------------
# input validation through the likelihood


def test_loglik_rejects_bad_lengths():
    model = model_plain_2s()
    steps = steps_plain_2s()
    steps.length[3] = 0.0
    with pytest.raises(InvalidObservation, match="step 3"):
        hmm_loglik(model, steps)


def test_loglik_requires_model_covariates():
    model = model_covariates_2s()
    steps = steps_plain_2s()
    with pytest.raises(MissingCovariate, match="temp"):
        hmm_loglik(model, steps)


def test_loglik_rejects_nan_covariates():
    model = model_covariates_2s()
    steps = steps_covariates_2s()
    steps.covariates["snow"][2] = np.nan
    with pytest.raises(MissingCovariate, match="step 2"):
        hmm_loglik(model, steps)


# ---------------------------------------------------------------------------
# parameter layout


def test_layout_pack_to_model_round_trip():
    model = model_covariates_2s()
    layout = ParamLayout(2, ("temp",), ("snow",), "free")
    assert len(layout.names) == layout.size
    theta = layout.pack(model)
    back = layout.to_model(theta)
    for i in range(2):
        assert math.isclose(back.step[i].mean, model.step[i].mean, rel_tol=1e-12)
        assert math.isclose(back.step[i].sd, model.step[i].sd, rel_tol=1e-12)
        assert math.isclose(back.angle[i].kappa, model.angle[i].kappa,
                            rel_tol=1e-12)
    np.testing.assert_array_equal(back.trans_coefs, model.trans_coefs)
    np.testing.assert_array_equal(back.obs_mean_slopes, model.obs_mean_slopes)
    np.testing.assert_allclose(back.delta, model.delta, rtol=1e-12)


def test_layout_names():
    layout = ParamLayout(2, ("temp",), ("snow",), "free")
    assert "mean.s1" in layout.names
    assert "mean.s2:snow" in layout.names
    assert "trans.s1->s2:temp" in layout.names
    assert "delta.s2" in layout.names
    assert layout.names.index("mean.s1") == 0


def test_layout_rejects_mismatched_model():
    layout = ParamLayout(2, (), (), "free")
    with pytest.raises(ValueError, match="layout"):
        layout.pack(model_covariates_2s())


def test_layout_permute_relabels_states():
    model = model_stationary_3s(with_covariate=True)
    layout = ParamLayout(3, ("temp",), (), "stationary")
    theta = layout.pack(model)
    order = np.array([2, 0, 1])
    back = layout.to_model(layout.permute(theta, order))
    for a in range(3):
        assert math.isclose(back.step[a].mean, model.step[order[a]].mean,
                            rel_tol=1e-12)
        assert math.isclose(back.angle[a].kappa, model.angle[order[a]].kappa,
                            rel_tol=1e-12)
    np.testing.assert_allclose(
        back.trans_coefs, model.trans_coefs[np.ix_(order, order)], atol=1e-12
    )
    inverse = np.argsort(order)
    round_trip = layout.permute(layout.permute(theta, order), inverse)
    np.testing.assert_allclose(round_trip, theta, atol=1e-12)


def test_layout_permute_keeps_likelihood():
    # relabeling states must not change the distribution of the data
    model = model_covariates_2s()
    layout = ParamLayout(2, ("temp",), ("snow",), "free")
    steps = steps_covariates_2s()
    flipped = layout.to_model(layout.permute(layout.pack(model), np.array([1, 0])))
    assert math.isclose(hmm_loglik(flipped, steps), hmm_loglik(model, steps),
                        rel_tol=1e-12)


# ---------------------------------------------------------------------------
# simulation


def test_simulate_is_deterministic():
    model = model_plain_2s()
    t1, s1 = simulate_hmm(model, 50, Rng(99).child("sim"))
    t2, s2 = simulate_hmm(model, 50, Rng(99).child("sim"))
    np.testing.assert_array_equal(t1.coords, t2.coords)
    np.testing.assert_array_equal(s1, s2)
    t3, _ = simulate_hmm(model, 50, Rng(99).child("other"))
    assert not np.array_equal(t1.coords, t3.coords)


def test_simulate_shapes_and_validation():
    model = model_plain_2s()
    track, states = simulate_hmm(model, 40, Rng(5), t0=1000, interval_s=60)
    assert track.coords.shape == (41, 2)
    assert states.shape == (40,)
    assert states.min() >= 1 and states.max() <= 2
    np.testing.assert_array_equal(np.diff(track.times), 60)
    assert track.times[0] == 1000
    with pytest.raises(ValueError, match="n_steps"):
        simulate_hmm(model, 0, Rng(5))
    cov_model = model_covariates_2s()
    with pytest.raises(MissingCovariate, match="temp"):
        simulate_hmm(cov_model, 10, Rng(5))
    with pytest.raises(ValueError, match="length"):
        simulate_hmm(
            cov_model, 10, Rng(5),
            covariate_series={"temp": np.zeros(9), "snow": np.zeros(10)},
        )


def test_simulate_tracks_the_stationary_distribution():
    model = model_plain_2s()
    _, states = simulate_hmm(model, 20000, Rng(123).child("freq"))
    pi = stationary_distribution(transition_matrix(model, {}))
    freq = np.bincount(states - 1, minlength=2) / states.size
    np.testing.assert_allclose(freq, pi, atol=0.02)


def test_simulated_lengths_follow_the_state():
    model = model_plain_2s()
    track, states = simulate_hmm(model, 8000, Rng(7).child("len"))
    d = np.diff(track.coords, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    for i, params in enumerate(model.step):
        sample = lengths[states == i + 1]
        assert abs(sample.mean() - params.mean) / params.mean < 0.05


# ---------------------------------------------------------------------------
# fitting


def test_fit_rejects_tiny_series():
    steps = make_series([100.0] * 8, [np.nan] + [0.1] * 7)
    with pytest.raises(TooFewSteps):
        fit_hmm(steps, 3, Rng(1))
    with pytest.raises(ValueError, match="n_states"):
        fit_hmm(steps, 0, Rng(1))
    with pytest.raises(ValueError, match="restart"):
        fit_hmm(steps, 2, Rng(1), config=HmmFitConfig(restarts=0))


def test_fit_recovers_two_states():
    model = model_plain_2s()
    rng = Rng(42)
    track, _ = simulate_hmm(model, 1500, rng.child("sim"))
    d = np.diff(track.coords, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    heading = np.arctan2(d[:, 1], d[:, 0])
    turns = np.full(lengths.size, np.nan)
    turns[1:] = np.angle(np.exp(1j * np.diff(heading)))
    steps = make_series(lengths, turns)
    fit = fit_hmm(steps, 2, rng.child("fit"), config=HmmFitConfig(restarts=5))

    assert fit.converged
    assert fit.n_obs == 1500 and fit.n_bursts == 1
    assert len(fit.restart_logliks) == 5
    assert math.isclose(fit.loglik, max(fit.restart_logliks), rel_tol=1e-9)
    # the optimum over the family cannot fall below the truth on this data
    assert fit.loglik >= hmm_loglik(model, steps) - 1e-6
    means = [p.mean for p in fit.model.step]
    assert means[0] < means[1], "states must come back slow to fast"
    for got, true in zip(means, (120.0, 600.0)):
        assert abs(got - true) / true < 0.10
    assert fit.se_ok
    assert np.all(fit.se[fit.se_valid] > 0)
    assert fit.param_names == fit.layout.names


def test_fit_finds_a_transition_covariate_effect():
    rng = Rng(2024)
    temp = np.array(rng.uniforms(900)) * 4.0 - 2.0
    model = HmmModel(
        n_states=2,
        step=(GammaParams(mean=100.0, sd=60.0), GammaParams(mean=800.0, sd=400.0)),
        angle=(VonMisesParams(0.0, 0.3), VonMisesParams(0.0, 2.0)),
        trans_coefs=np.array(
            [[[0.0, 0.0], [-1.5, 0.9]], [[-1.6, 0.0], [0.0, 0.0]]]
        ),
        trans_covariates=("temp",),
        delta=np.array([0.5, 0.5]),
    )
    track, _ = simulate_hmm(model, 900, rng.child("sim"),
                            covariate_series={"temp": temp})
    d = np.diff(track.coords, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    heading = np.arctan2(d[:, 1], d[:, 0])
    turns = np.full(lengths.size, np.nan)
    turns[1:] = np.angle(np.exp(1j * np.diff(heading)))
    steps = make_series(lengths, turns, covariates={"temp": temp})
    fit = fit_hmm(steps, 2, rng.child("fit"), transition_covariates=("temp",),
                  config=HmmFitConfig(restarts=3))
    assert fit.loglik >= hmm_loglik(model, steps) - 1e-6
    slope = fit.params[fit.param_names.index("trans.s1->s2:temp")]
    assert slope > 0.3, "true slope 0.9 should come back clearly positive"
    assert fit.covariate_means == {"temp": pytest.approx(float(temp.mean()))}


def test_state_probabilities_rows_sum_to_one_on_fitted_model():
    model = model_stationary_3s()
    track, _ = simulate_hmm(model, 300, Rng(11).child("sim"))
    d = np.diff(track.coords, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    heading = np.arctan2(d[:, 1], d[:, 0])
    turns = np.full(lengths.size, np.nan)
    turns[1:] = np.angle(np.exp(1j * np.diff(heading)))
    steps = make_series(lengths, turns)
    probs = state_probabilities(model, steps)
    assert probs.shape == (300, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)
    assert probs.min() >= 0.0
