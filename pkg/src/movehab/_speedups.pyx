# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled kernels.

Mirrors :mod:`movehab._kernels_py` exactly; see that module for the
semantics, argument conventions, and status codes. The random streams here
must consume and transform draws identically to the pure versions, so any
change to one file must be made to both.
"""

from libc.math cimport (INFINITY, acos, cos, exp, fmod, isfinite, log, pow,
                        sin, sqrt)

import numpy as np

BACKEND = "compiled"

cdef enum:
    _CH_OK = 0
    _CH_BAD_SHAPE = 1
    _CH_EXHAUSTED = 2

CHAIN_OK = _CH_OK
CHAIN_BAD_SHAPE = _CH_BAD_SHAPE
CHAIN_EXHAUSTED = _CH_EXHAUSTED

ctypedef unsigned long long u64

cdef u64 _GAMMA = 0x9E3779B97F4A7C15ULL
cdef u64 _M1 = 0xBF58476D1CE4E5B9ULL
cdef u64 _M2 = 0x94D049BB133111EBULL
cdef double _TWO_NEG_53 = 1.0 / 9007199254740992.0
cdef double _PI = 3.141592653589793
cdef double _TWO_PI = 6.283185307179586


cdef inline u64 _mix64(u64 z) nogil:
    z = (z ^ (z >> 30)) * _M1
    z = (z ^ (z >> 27)) * _M2
    return z ^ (z >> 31)


cdef inline double _uniform(u64 key, u64* counter) nogil:
    counter[0] += 1
    return (_mix64(key + counter[0] * _GAMMA) >> 11) * _TWO_NEG_53


cdef inline double _normal(u64 key, u64* counter) nogil:
    cdef double u1 = _uniform(key, counter)
    cdef double u2 = _uniform(key, counter)
    return sqrt(-2.0 * log(1.0 - u1)) * cos(_TWO_PI * u2)


cdef inline double _gamma_mt(double shape, u64 key, u64* counter) nogil:
    # Marsaglia-Tsang, shape >= 1, unit scale
    cdef double d = shape - 1.0 / 3.0
    cdef double c = 1.0 / sqrt(9.0 * d)
    cdef double x, v, u, x2
    while True:
        x = _normal(key, counter)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(key, counter)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if u > 0.0 and log(u) < 0.5 * x2 + d * (1.0 - v + log(v)):
            return d * v


cdef inline double _gamma_draw(double shape, double rate, u64 key, u64* counter) nogil:
    cdef double u
    if shape < 1.0:
        u = _uniform(key, counter)
        while u == 0.0:
            u = _uniform(key, counter)
        return _gamma_mt(shape + 1.0, key, counter) / rate * pow(u, 1.0 / shape)
    return _gamma_mt(shape, key, counter) / rate


cdef inline double _vonmises0(double kappa, u64 key, u64* counter) nogil:
    # mu = 0, returns +/- acos(f) without wrapping
    cdef double tau, rho, r, u1, u2, u3, z, f, c, mag
    if kappa == 0.0:
        return -_PI + _TWO_PI * _uniform(key, counter)
    tau = 1.0 + sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    while True:
        u1 = _uniform(key, counter)
        u2 = _uniform(key, counter)
        z = cos(_PI * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        if u2 < c * (2.0 - c):
            break
        if u2 == 0.0 or log(c / u2) + 1.0 - c >= 0.0:
            break
    u3 = _uniform(key, counter)
    if f > 1.0:
        f = 1.0
    elif f < -1.0:
        f = -1.0
    mag = acos(f)
    return mag if u3 >= 0.5 else -mag


cdef inline double _wrap(double a) nogil:
    cdef double r = fmod(a + _PI, _TWO_PI)
    if r <= 0.0:
        r += _TWO_PI
    return r - _PI


def rng_uniforms(key, counter, n):
    """Stream helper for cross-backend parity tests."""
    cdef u64 k = key
    cdef u64 cnt = counter
    cdef Py_ssize_t i, m = n
    out = np.empty(m)
    cdef double[::1] o = out
    for i in range(m):
        o[i] = _uniform(k, &cnt)
    return out, cnt


def rng_gammas(key, counter, n, shape, rate):
    cdef u64 k = key
    cdef u64 cnt = counter
    cdef double sh = shape
    cdef double ra = rate
    cdef Py_ssize_t i, m = n
    out = np.empty(m)
    cdef double[::1] o = out
    for i in range(m):
        o[i] = _gamma_draw(sh, ra, k, &cnt)
    return out, cnt


def rng_vonmises(key, counter, n, mu, kappa):
    cdef u64 k = key
    cdef u64 cnt = counter
    cdef double mmu = mu
    cdef double kap = kappa
    cdef Py_ssize_t i, m = n
    cdef double draw
    out = np.empty(m)
    cdef double[::1] o = out
    for i in range(m):
        if kap == 0.0:
            o[i] = _wrap(-_PI + _TWO_PI * _uniform(k, &cnt) + mmu)
        else:
            draw = _vonmises0(kap, k, &cnt)
            o[i] = _wrap(mmu + draw)
    return out, cnt


cdef double _forward(double[:, ::1] logp, double[:, ::1] t2,
                     double[:, :, ::1] t3, bint tv,
                     double[:, ::1] deltas, long long[::1] offsets,
                     double* alpha, double* tmp) nogil:
    cdef Py_ssize_t B = offsets.shape[0] - 1
    cdef Py_ssize_t N = logp.shape[1]
    cdef Py_ssize_t b, s, e, t, i, j
    cdef double total = 0.0, m, c, v
    for b in range(B):
        s = offsets[b]
        e = offsets[b + 1]
        m = logp[s, 0]
        for j in range(1, N):
            if logp[s, j] > m:
                m = logp[s, j]
        if not isfinite(m):
            return -INFINITY
        c = 0.0
        for j in range(N):
            alpha[j] = deltas[b, j] * exp(logp[s, j] - m)
            c += alpha[j]
        if c <= 0.0:
            return -INFINITY
        total += log(c) + m
        for j in range(N):
            alpha[j] /= c
        for t in range(s + 1, e):
            m = logp[t, 0]
            for j in range(1, N):
                if logp[t, j] > m:
                    m = logp[t, j]
            if not isfinite(m):
                return -INFINITY
            c = 0.0
            for j in range(N):
                v = 0.0
                if tv:
                    for i in range(N):
                        v += alpha[i] * t3[t - 1, i, j]
                else:
                    for i in range(N):
                        v += alpha[i] * t2[i, j]
                tmp[j] = v * exp(logp[t, j] - m)
                c += tmp[j]
            if c <= 0.0:
                return -INFINITY
            total += log(c) + m
            for j in range(N):
                alpha[j] = tmp[j] / c
    return total


def forward_loglik(logp, trans, deltas, offsets):
    """Total log likelihood via the scaled forward recursion."""
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t N = logp.shape[1]
    scratch = np.empty(2 * N)
    cdef double[::1] sc = scratch
    cdef double[:, ::1] lp = logp
    cdef double[:, ::1] dl = deltas
    cdef long long[::1] off = offsets
    cdef double[:, ::1] t2
    cdef double[:, :, ::1] t3
    cdef double out
    if trans.ndim == 2:
        t2 = trans
        t3 = np.empty((1, 1, 1))
        out = _forward(lp, t2, t3, 0, dl, off, &sc[0], &sc[N])
    else:
        t3 = trans
        t2 = np.empty((1, 1))
        out = _forward(lp, t2, t3, 1, dl, off, &sc[0], &sc[N])
    return out


def viterbi_path(logp, trans, deltas, offsets):
    """Most likely state sequence (0-based), ties to the lower state."""
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    with np.errstate(divide="ignore"):
        ltrans = np.log(trans)
        ldeltas = np.log(deltas)
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t N = logp.shape[1]
    path = np.empty(T, dtype=np.int32)
    back = np.empty((T, N), dtype=np.int32)
    score = np.empty(N)
    prev = np.empty(N)
    cdef double[:, ::1] lp = logp
    cdef double[:, ::1] ld = ldeltas
    cdef long long[::1] off = offsets
    cdef int[::1] pth = path
    cdef int[:, ::1] bk = back
    cdef double[::1] sco = score
    cdef double[::1] prv = prev
    cdef bint tv = ltrans.ndim == 3
    cdef double[:, ::1] lt2
    cdef double[:, :, ::1] lt3
    if tv:
        lt3 = ltrans
        lt2 = np.empty((1, 1))
    else:
        lt2 = ltrans
        lt3 = np.empty((1, 1, 1))
    cdef Py_ssize_t B = offsets.shape[0] - 1
    cdef Py_ssize_t b, s, e, t, i, j, bi
    cdef double best, v
    with nogil:
        for b in range(B):
            s = off[b]
            e = off[b + 1]
            for j in range(N):
                sco[j] = ld[b, j] + lp[s, j]
            for t in range(s + 1, e):
                for j in range(N):
                    if tv:
                        best = sco[0] + lt3[t - 1, 0, j]
                    else:
                        best = sco[0] + lt2[0, j]
                    bi = 0
                    for i in range(1, N):
                        if tv:
                            v = sco[i] + lt3[t - 1, i, j]
                        else:
                            v = sco[i] + lt2[i, j]
                        if v > best:
                            best = v
                            bi = i
                    prv[j] = best
                    bk[t, j] = <int> bi
                for j in range(N):
                    sco[j] = prv[j] + lp[t, j]
            j = 0
            best = sco[0]
            for i in range(1, N):
                if sco[i] > best:
                    best = sco[i]
                    j = i
            pth[e - 1] = <int> j
            for t in range(e - 1, s, -1):
                j = bk[t, j]
                pth[t - 1] = <int> j
    return path


def smoothing_probs(logp, trans, deltas, offsets):
    """Posterior state probabilities (T, N) via scaled forward-backward."""
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t N = logp.shape[1]
    out = np.empty((T, N))
    alpha = np.empty((T, N))
    scale = np.empty(T)
    shift = np.empty(T)
    beta = np.empty(N)
    bnew = np.empty(N)
    cdef double[:, ::1] o = out
    cdef double[:, ::1] al = alpha
    cdef double[::1] scl = scale
    cdef double[::1] shf = shift
    cdef double[::1] bt = beta
    cdef double[::1] bn = bnew
    cdef double[:, ::1] lp = logp
    cdef double[:, ::1] dl = deltas
    cdef long long[::1] off = offsets
    cdef bint tv = trans.ndim == 3
    cdef double[:, ::1] t2
    cdef double[:, :, ::1] t3
    if tv:
        t3 = trans
        t2 = np.empty((1, 1))
    else:
        t2 = trans
        t3 = np.empty((1, 1, 1))
    cdef Py_ssize_t B = offsets.shape[0] - 1
    cdef Py_ssize_t b, s, e, t, i, j
    cdef double c, m, v, rowsum
    cdef bint bad = 0
    with nogil:
        for b in range(B):
            if bad:
                break
            s = off[b]
            e = off[b + 1]
            for t in range(s, e):
                m = lp[t, 0]
                for j in range(1, N):
                    if lp[t, j] > m:
                        m = lp[t, j]
                shf[t] = m
            c = 0.0
            for j in range(N):
                al[s, j] = dl[b, j] * exp(lp[s, j] - shf[s])
                c += al[s, j]
            if c <= 0.0:
                bad = 1
                break
            scl[s] = c
            for j in range(N):
                al[s, j] /= c
            for t in range(s + 1, e):
                c = 0.0
                for j in range(N):
                    v = 0.0
                    if tv:
                        for i in range(N):
                            v += al[t - 1, i] * t3[t - 1, i, j]
                    else:
                        for i in range(N):
                            v += al[t - 1, i] * t2[i, j]
                    al[t, j] = v * exp(lp[t, j] - shf[t])
                    c += al[t, j]
                if c <= 0.0:
                    bad = 1
                    break
                scl[t] = c
                for j in range(N):
                    al[t, j] /= c
            if bad:
                break
            for j in range(N):
                o[e - 1, j] = al[e - 1, j]
                bt[j] = 1.0
            for t in range(e - 2, s - 1, -1):
                for i in range(N):
                    v = 0.0
                    if tv:
                        for j in range(N):
                            v += t3[t, i, j] * exp(lp[t + 1, j] - shf[t + 1]) * bt[j]
                    else:
                        for j in range(N):
                            v += t2[i, j] * exp(lp[t + 1, j] - shf[t + 1]) * bt[j]
                    bn[i] = v / scl[t + 1]
                rowsum = 0.0
                for i in range(N):
                    bt[i] = bn[i]
                    o[t, i] = al[t, i] * bt[i]
                    rowsum += o[t, i]
                for i in range(N):
                    o[t, i] /= rowsum
    if bad:
        raise FloatingPointError("forward pass underflowed to zero")
    return out


def ssf_chain(values, valid, xll, yll, cellsize,
              start_x, start_y, start_heading,
              shape0, rate, kappa, beta_hab, beta_int,
              n_steps, n_candidates, max_tries, key, counter):
    """Simulate a selection-weighted movement chain on a covariate stack.

    Same contract as the pure version; see ``_kernels_py.ssf_chain``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    beta_hab = np.ascontiguousarray(beta_hab, dtype=np.float64)
    beta_int = np.ascontiguousarray(beta_int, dtype=np.float64)
    cdef Py_ssize_t K = values.shape[0]
    cdef Py_ssize_t nrows = values.shape[1]
    cdef Py_ssize_t ncols = values.shape[2]
    cdef Py_ssize_t NS = n_steps
    cdef Py_ssize_t NC = n_candidates
    cdef Py_ssize_t MT = max_tries
    positions = np.empty((NS, 2))
    x_here = np.empty(K)
    cand_eta = np.empty(NC)
    cand_end = np.empty((NC, 2))
    cand_turn = np.empty(NC)
    w = np.empty(NC)
    cdef double[:, :, ::1] vals = values
    cdef unsigned char[:, ::1] ok = valid
    cdef double[::1] bh = beta_hab
    cdef double[::1] bi = beta_int
    cdef double[:, ::1] pos = positions
    cdef double[::1] xh = x_here
    cdef double[::1] ce = cand_eta
    cdef double[:, ::1] cend = cand_end
    cdef double[::1] ct = cand_turn
    cdef double[::1] wv = w
    cdef double gxll = xll, gyll = yll, cs = cellsize
    cdef double x = start_x, y = start_y, heading = start_heading
    cdef double sh0 = shape0, ra = rate, kap = kappa
    cdef u64 k64 = key
    cdef u64 cnt = counter
    cdef Py_ssize_t step = 0, i, k, tries, col, row, ccol_i, crow, pick
    cdef double shape_loc, l, uu, theta, h, ex, ey, ccol, crow_f, eta, lnl, v
    cdef double m, wsum, target, acc
    cdef bint placed
    cdef int status = _CH_OK
    cdef long long n_rejected = 0
    with nogil:
        while step < NS:
            col = <Py_ssize_t> ((x - gxll) / cs)
            row = nrows - 1 - (<Py_ssize_t> ((y - gyll) / cs))
            shape_loc = sh0
            for k in range(K):
                xh[k] = vals[k, row, col]
                shape_loc += bi[k] * xh[k]
            if not (shape_loc > 0.0) or not isfinite(shape_loc):
                status = _CH_BAD_SHAPE
                break
            for i in range(NC):
                placed = 0
                for tries in range(MT):
                    if shape_loc < 1.0:
                        uu = _uniform(k64, &cnt)
                        while uu == 0.0:
                            uu = _uniform(k64, &cnt)
                        l = _gamma_mt(shape_loc + 1.0, k64, &cnt) / ra * pow(uu, 1.0 / shape_loc)
                    else:
                        l = _gamma_mt(shape_loc, k64, &cnt) / ra
                    theta = _vonmises0(kap, k64, &cnt)
                    h = heading + theta
                    ex = x + l * cos(h)
                    ey = y + l * sin(h)
                    ccol = (ex - gxll) / cs
                    crow_f = (ey - gyll) / cs
                    if ccol < 0.0 or crow_f < 0.0 or ccol >= ncols or crow_f >= nrows:
                        n_rejected += 1
                        continue
                    ccol_i = <Py_ssize_t> ccol
                    crow = nrows - 1 - (<Py_ssize_t> crow_f)
                    if not ok[crow, ccol_i]:
                        n_rejected += 1
                        continue
                    if l <= 0.0:
                        n_rejected += 1
                        continue
                    eta = 0.0
                    lnl = log(l)
                    for k in range(K):
                        v = vals[k, crow, ccol_i]
                        eta += bh[k] * v + bi[k] * (v - xh[k]) * lnl
                    ce[i] = eta
                    cend[i, 0] = ex
                    cend[i, 1] = ey
                    ct[i] = theta
                    placed = 1
                    break
                if not placed:
                    status = _CH_EXHAUSTED
                    break
            if status != _CH_OK:
                break
            m = ce[0]
            for i in range(1, NC):
                if ce[i] > m:
                    m = ce[i]
            wsum = 0.0
            for i in range(NC):
                wv[i] = exp(ce[i] - m)
                wsum += wv[i]
            target = _uniform(k64, &cnt) * wsum
            acc = 0.0
            pick = NC - 1
            for i in range(NC):
                acc += wv[i]
                if target < acc:
                    pick = i
                    break
            x = cend[pick, 0]
            y = cend[pick, 1]
            heading = heading + ct[pick]
            pos[step, 0] = x
            pos[step, 1] = y
            step += 1
    return status, positions[:step], cnt, n_rejected
