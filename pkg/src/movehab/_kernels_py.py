"""Pure-Python reference kernels.

These are the fallback implementations selected when the compiled extension
is unavailable (see :mod:`movehab.kernels`). They define the semantics the
compiled versions must reproduce exactly: same stream consumption order,
same tie-breaking, same guard branches. Keep the two in lockstep.

Conventions shared by both backends:

- ``logp``: (T, N) log observation densities.
- ``trans``: (N, N) constant matrix or (T, N, N) tensor; when
  time-varying, ``trans[t]`` governs the move from row ``t`` to ``t + 1``,
  so rows ``offsets[b + 1] - 1`` of each burst are unused.
- ``deltas``: (B, N) initial state distribution per burst.
- ``offsets``: (B + 1,) int64 row offsets; burst ``b`` spans
  ``offsets[b]:offsets[b + 1]``.
"""

from __future__ import annotations

import math

import numpy as np

from .distributions import _gamma_mt, gamma_draw, vonmises_draw
from .rng import Rng

BACKEND = "python"

# ssf_chain status codes, shared with the compiled backend
CHAIN_OK = 0
CHAIN_BAD_SHAPE = 1
CHAIN_EXHAUSTED = 2


def _trans_at(trans: np.ndarray, t: int) -> np.ndarray:
    return trans if trans.ndim == 2 else trans[t]


def forward_loglik(
    logp: np.ndarray, trans: np.ndarray, deltas: np.ndarray, offsets: np.ndarray
) -> float:
    """Total log likelihood via the scaled forward recursion."""
    total = 0.0
    for b in range(len(offsets) - 1):
        s, e = int(offsets[b]), int(offsets[b + 1])
        # scale against the row max so short tails cannot underflow
        m = np.max(logp[s])
        if not np.isfinite(m):
            return -math.inf
        alpha = deltas[b] * np.exp(logp[s] - m)
        c = alpha.sum()
        if c <= 0.0:
            return -math.inf
        total += math.log(c) + m
        alpha /= c
        for t in range(s + 1, e):
            m = np.max(logp[t])
            if not np.isfinite(m):
                return -math.inf
            alpha = (alpha @ _trans_at(trans, t - 1)) * np.exp(logp[t] - m)
            c = alpha.sum()
            if c <= 0.0:
                return -math.inf
            total += math.log(c) + m
            alpha /= c
    return total


def viterbi_path(
    logp: np.ndarray, trans: np.ndarray, deltas: np.ndarray, offsets: np.ndarray
) -> np.ndarray:
    """Most likely state sequence (0-based), ties to the lower state."""
    T, N = logp.shape
    path = np.empty(T, dtype=np.int32)
    with np.errstate(divide="ignore"):
        ltrans = np.log(trans)
        ldeltas = np.log(deltas)
    for b in range(len(offsets) - 1):
        s, e = int(offsets[b]), int(offsets[b + 1])
        n = e - s
        score = ldeltas[b] + logp[s]
        back = np.empty((n, N), dtype=np.int32)
        for t in range(s + 1, e):
            lt = ltrans if ltrans.ndim == 2 else ltrans[t - 1]
            prev = np.empty(N)
            for j in range(N):
                best_i = 0
                best = score[0] + lt[0, j]
                for i in range(1, N):
                    v = score[i] + lt[i, j]
                    if v > best:
                        best = v
                        best_i = i
                prev[j] = best
                back[t - s, j] = best_i
            score = prev + logp[t]
        j = 0
        best = score[0]
        for i in range(1, N):
            if score[i] > best:
                best = score[i]
                j = i
        path[e - 1] = j
        for t in range(e - 1, s, -1):
            j = back[t - s, j]
            path[t - 1] = j
    return path


def smoothing_probs(
    logp: np.ndarray, trans: np.ndarray, deltas: np.ndarray, offsets: np.ndarray
) -> np.ndarray:
    """Posterior state probabilities (T, N) via scaled forward-backward."""
    T, N = logp.shape
    out = np.empty((T, N))
    for b in range(len(offsets) - 1):
        s, e = int(offsets[b]), int(offsets[b + 1])
        n = e - s
        alpha = np.empty((n, N))
        scale = np.empty(n)
        shift = np.empty(n)
        for t in range(s, e):
            shift[t - s] = np.max(logp[t])
        p = np.exp(logp[s] - shift[0])
        a = deltas[b] * p
        c = a.sum()
        if c <= 0.0:
            raise FloatingPointError("forward pass underflowed to zero")
        alpha[0] = a / c
        scale[0] = c
        for t in range(s + 1, e):
            p = np.exp(logp[t] - shift[t - s])
            a = (alpha[t - s - 1] @ _trans_at(trans, t - 1)) * p
            c = a.sum()
            if c <= 0.0:
                raise FloatingPointError("forward pass underflowed to zero")
            alpha[t - s] = a / c
            scale[t - s] = c
        beta = np.ones(N)
        out[e - 1] = alpha[n - 1]
        for t in range(e - 2, s - 1, -1):
            p = np.exp(logp[t + 1] - shift[t - s + 1])
            beta = (_trans_at(trans, t) @ (p * beta)) / scale[t - s + 1]
            row = alpha[t - s] * beta
            out[t] = row / row.sum()
    return out


def rng_uniforms(key: int, counter: int, n: int):
    """Stream helper for cross-backend parity tests."""
    r = Rng(key, counter)
    out = np.array([r.uniform() for _ in range(n)])
    return out, r.counter


def rng_gammas(key: int, counter: int, n: int, shape: float, rate: float):
    r = Rng(key, counter)
    out = np.array([gamma_draw(shape, rate, r) for _ in range(n)])
    return out, r.counter


def rng_vonmises(key: int, counter: int, n: int, mu: float, kappa: float):
    r = Rng(key, counter)
    out = np.array([vonmises_draw(mu, kappa, r) for _ in range(n)])
    return out, r.counter


def ssf_chain(
    values: np.ndarray,
    valid: np.ndarray,
    xll: float,
    yll: float,
    cellsize: float,
    start_x: float,
    start_y: float,
    start_heading: float,
    shape0: float,
    rate: float,
    kappa: float,
    beta_hab: np.ndarray,
    beta_int: np.ndarray,
    n_steps: int,
    n_candidates: int,
    max_tries: int,
    key: int,
    counter: int,
):
    """Simulate a selection-weighted movement chain on a covariate stack.

    At each step, ``n_candidates`` proposals are drawn from the
    selection-adjusted kernel (gamma shape gets the interaction term at the
    current location), proposals landing outside the valid extent are
    redrawn up to ``max_tries`` times each, and one candidate is kept with
    probability proportional to
    ``exp(beta_hab . x(end) + beta_int . (x(end) - x(start)) ln l)``.

    Returns
    -------
    (status, positions, counter, n_rejected)
        ``status`` is one of the CHAIN_* codes; on failure ``positions``
        holds the steps completed so far.
    """
    K, nrows, ncols = values.shape
    rng = Rng(key, counter)
    positions = np.empty((n_steps, 2))
    x = float(start_x)
    y = float(start_y)
    heading = float(start_heading)
    n_rejected = 0

    x_here = np.empty(K)
    cand_eta = np.empty(n_candidates)
    cand_end = np.empty((n_candidates, 2))
    cand_turn = np.empty(n_candidates)

    for step in range(n_steps):
        col = int((x - xll) / cellsize)
        row = nrows - 1 - int((y - yll) / cellsize)
        shape_loc = shape0
        for k in range(K):
            x_here[k] = float(values[k, row, col])
            shape_loc += float(beta_int[k]) * x_here[k]
        if not (shape_loc > 0.0) or not math.isfinite(shape_loc):
            return CHAIN_BAD_SHAPE, positions[:step], rng.counter, n_rejected

        for i in range(n_candidates):
            placed = False
            for _ in range(max_tries):
                if shape_loc < 1.0:
                    u = rng.uniform()
                    while u == 0.0:
                        u = rng.uniform()
                    l = _gamma_mt(shape_loc + 1.0, rng) / rate * u ** (1.0 / shape_loc)
                else:
                    l = _gamma_mt(shape_loc, rng) / rate
                theta = _vonmises0(kappa, rng)
                h = heading + theta
                ex = x + l * math.cos(h)
                ey = y + l * math.sin(h)
                ccol = (ex - xll) / cellsize
                crow_f = (ey - yll) / cellsize
                if ccol < 0.0 or crow_f < 0.0 or ccol >= ncols or crow_f >= nrows:
                    n_rejected += 1
                    continue
                ccol_i = int(ccol)
                crow = nrows - 1 - int(crow_f)
                if not valid[crow, ccol_i]:
                    n_rejected += 1
                    continue
                if l <= 0.0:
                    n_rejected += 1
                    continue
                eta = 0.0
                lnl = math.log(l)
                for k in range(K):
                    v = float(values[k, crow, ccol_i])
                    eta += float(beta_hab[k]) * v + float(beta_int[k]) * (v - x_here[k]) * lnl
                cand_eta[i] = eta
                cand_end[i, 0] = ex
                cand_end[i, 1] = ey
                cand_turn[i] = theta
                placed = True
                break
            if not placed:
                return CHAIN_EXHAUSTED, positions[:step], rng.counter, n_rejected

        # scalar, fixed-order arithmetic so both backends pick identically
        m = float(cand_eta[0])
        for i in range(1, n_candidates):
            if cand_eta[i] > m:
                m = float(cand_eta[i])
        wsum = 0.0
        w = [0.0] * n_candidates
        for i in range(n_candidates):
            w[i] = math.exp(float(cand_eta[i]) - m)
            wsum += w[i]
        target = rng.uniform() * wsum
        acc = 0.0
        pick = n_candidates - 1
        for i in range(n_candidates):
            acc += w[i]
            if target < acc:
                pick = i
                break
        x = float(cand_end[pick, 0])
        y = float(cand_end[pick, 1])
        heading = heading + float(cand_turn[pick])
        positions[step, 0] = x
        positions[step, 1] = y
    return CHAIN_OK, positions, rng.counter, n_rejected


def _vonmises0(kappa: float, rng: Rng) -> float:
    """Von Mises draw with mu = 0, inlined to match the compiled kernel."""
    if kappa == 0.0:
        return -math.pi + 2.0 * math.pi * rng.uniform()
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    while True:
        u1 = rng.uniform()
        u2 = rng.uniform()
        z = math.cos(math.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        if u2 < c * (2.0 - c):
            break
        if u2 == 0.0 or math.log(c / u2) + 1.0 - c >= 0.0:
            break
    u3 = rng.uniform()
    mag = math.acos(max(-1.0, min(1.0, f)))
    return mag if u3 >= 0.5 else -mag
