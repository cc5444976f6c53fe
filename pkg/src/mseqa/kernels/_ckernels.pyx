# cython: language_level=3, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""

import numpy as np
cimport numpy as cnp
cimport cython
from cython cimport floating
from libc.math cimport erf, exp, sqrt, INFINITY

cnp.import_array()

cdef double SQRT1_2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _ln_rows(floating[:, ::1] x, floating[::1] g, floating[::1] b, double eps,
                   floating[:, ::1] y, floating[:, ::1] xhat, floating[::1] rstd) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], r, k
    cdef double mu, var, t, rs
    for r in range(n):
        mu = 0.0
        for k in range(d):
            mu += x[r, k]
        mu /= d
        var = 0.0
        for k in range(d):
            t = x[r, k] - mu
            var += t * t
        var /= d
        rs = 1.0 / sqrt(var + eps)
        rstd[r] = <floating>rs
        for k in range(d):
            t = (x[r, k] - mu) * rs
            xhat[r, k] = <floating>t
            y[r, k] = <floating>(t * g[k] + b[k])


def layer_norm(x, scale, shift, eps):
    shape = x.shape
    d = shape[-1]
    x2 = np.ascontiguousarray(x).reshape(-1, d)
    y = np.empty_like(x2)
    xhat = np.empty_like(x2)
    rstd = np.empty(x2.shape[0], dtype=x2.dtype)
    g = np.ascontiguousarray(scale, dtype=x2.dtype)
    b = np.ascontiguousarray(shift, dtype=x2.dtype)
    if x2.dtype == np.float32:
        _ln_rows[float](x2, g, b, eps, y, xhat, rstd)
    else:
        _ln_rows[double](x2, g, b, eps, y, xhat, rstd)
    return y.reshape(shape), xhat.reshape(shape), rstd.reshape(shape[:-1] + (1,))


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _ln_back_rows(floating[:, ::1] dy, floating[:, ::1] xhat, floating[::1] rstd,
                        floating[::1] g, floating[:, ::1] dx, double[::1] dg,
                        double[::1] db) noexcept nogil:
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1], r, k
    cdef double m1, m2, t
    for r in range(n):
        m1 = 0.0
        m2 = 0.0
        for k in range(d):
            t = dy[r, k] * g[k]
            m1 += t
            m2 += t * xhat[r, k]
            dg[k] += dy[r, k] * xhat[r, k]
            db[k] += dy[r, k]
        m1 /= d
        m2 /= d
        for k in range(d):
            dx[r, k] = <floating>(rstd[r] * (dy[r, k] * g[k] - m1 - xhat[r, k] * m2))


def layer_norm_backward(dy, xhat, rstd, scale):
    shape = dy.shape
    d = shape[-1]
    dy2 = np.ascontiguousarray(dy).reshape(-1, d)
    xh2 = np.ascontiguousarray(xhat, dtype=dy2.dtype).reshape(-1, d)
    rs = np.ascontiguousarray(rstd, dtype=dy2.dtype).reshape(-1)
    g = np.ascontiguousarray(scale, dtype=dy2.dtype)
    dx = np.empty_like(dy2)
    dg = np.zeros(d, dtype=np.float64)
    db = np.zeros(d, dtype=np.float64)
    if dy2.dtype == np.float32:
        _ln_back_rows[float](dy2, xh2, rs, g, dx, dg, db)
    else:
        _ln_back_rows[double](dy2, xh2, rs, g, dx, dg, db)
    return dx.reshape(shape), dg.astype(dy2.dtype), db.astype(dy2.dtype)


cdef inline float _erff(float x) noexcept nogil:
    # erf as a rational function p(x)/q(x) on [-4, 4] (erf is +-1 in float32
    # beyond), accurate to a few ulp; branch-free so callers auto-vectorise
    cdef float x2, p, q
    if x > 4.0:
        x = 4.0
    if x < -4.0:
        x = -4.0
    x2 = x * x
    p = <float>-2.72614225801306e-10
    p = p * x2 + <float>2.77068142495902e-08
    p = p * x2 - <float>2.10102402082508e-06
    p = p * x2 - <float>5.69250639462346e-05
    p = p * x2 - <float>7.34990630326855e-04
    p = p * x2 - <float>2.95459980854025e-03
    p = p * x2 - <float>1.60960333262415e-02
    q = <float>-1.45660718464996e-05
    q = q * x2 - <float>2.13374055278905e-04
    q = q * x2 - <float>1.68282697438203e-03
    q = q * x2 - <float>7.37332916720468e-03
    q = q * x2 - <float>1.42647390514189e-02
    return x * p / q


cdef inline float _erff_prime(float x) noexcept nogil:
    # derivative of the rational form above, (p'q - pq') / q^2, and 0 outside [-4, 4]
    cdef float x2, p, dp, q, dq, inside = 1.0
    if x > 4.0:
        inside = 0.0
    if x < -4.0:
        inside = 0.0
    x2 = x * x
    # p(x) = x * P(x2), dp = P(x2) + 2 x2 P'(x2)
    p = <float>-2.72614225801306e-10
    p = p * x2 + <float>2.77068142495902e-08
    p = p * x2 - <float>2.10102402082508e-06
    p = p * x2 - <float>5.69250639462346e-05
    p = p * x2 - <float>7.34990630326855e-04
    p = p * x2 - <float>2.95459980854025e-03
    p = p * x2 - <float>1.60960333262415e-02
    dp = <float>(6 * -2.72614225801306e-10)
    dp = dp * x2 + <float>(5 * 2.77068142495902e-08)
    dp = dp * x2 - <float>(4 * 2.10102402082508e-06)
    dp = dp * x2 - <float>(3 * 5.69250639462346e-05)
    dp = dp * x2 - <float>(2 * 7.34990630326855e-04)
    dp = dp * x2 - <float>2.95459980854025e-03
    dp = p + 2 * x2 * dp
    q = <float>-1.45660718464996e-05
    q = q * x2 - <float>2.13374055278905e-04
    q = q * x2 - <float>1.68282697438203e-03
    q = q * x2 - <float>7.37332916720468e-03
    q = q * x2 - <float>1.42647390514189e-02
    dq = <float>(4 * -1.45660718464996e-05)
    dq = dq * x2 - <float>(3 * 2.13374055278905e-04)
    dq = dq * x2 - <float>(2 * 1.68282697438203e-03)
    dq = dq * x2 - <float>7.37332916720468e-03
    dq = 2 * x * dq
    return inside * (dp * q - x * p * dq) / (q * q)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _gelu_f(float[::1] x, float[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    cdef float v, half = 0.5, one = 1.0, r2 = SQRT1_2
    for i in range(x.shape[0]):
        v = x[i]
        y[i] = half * v * (one + _erff(v * r2))


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _gelu_d(double[::1] x, double[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        y[i] = 0.5 * v * (1.0 + erf(v * SQRT1_2))


def gelu(x):
    flat = np.ascontiguousarray(x).reshape(-1)
    out = np.empty_like(flat)
    if flat.dtype == np.float32:
        _gelu_f(flat, out)
    else:
        _gelu_d(flat, out)
    return out.reshape(x.shape)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _gelu_back_f(float[::1] dy, float[::1] x, float[::1] dx) noexcept nogil:
    cdef Py_ssize_t i
    cdef float v, half = 0.5, one = 1.0, r2 = SQRT1_2
    for i in range(x.shape[0]):
        v = x[i]
        # d/dv [v/2 (1 + erf(v/sqrt2))] = (1 + erf(u))/2 + v erf'(u) / (2 sqrt2)
        dx[i] = dy[i] * (half * (one + _erff(v * r2)) + half * r2 * v * _erff_prime(v * r2))


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _gelu_back_d(double[::1] dy, double[::1] x, double[::1] dx) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        dx[i] = dy[i] * (0.5 * (1.0 + erf(v * SQRT1_2)) + v * INV_SQRT_2PI * exp(-0.5 * v * v))


def gelu_backward(dy, x):
    dyf = np.ascontiguousarray(dy).reshape(-1)
    xf = np.ascontiguousarray(x, dtype=dyf.dtype).reshape(-1)
    out = np.empty_like(dyf)
    if dyf.dtype == np.float32:
        _gelu_back_f(dyf, xf, out)
    else:
        _gelu_back_d(dyf, xf, out)
    return out.reshape(dy.shape)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
cdef void _softmax_back_rows(floating[:, ::1] dp, floating[:, ::1] p, floating[:, ::1] ds) noexcept nogil:
    cdef Py_ssize_t n = dp.shape[0], t = dp.shape[1], r, k, c
    cdef floating *a
    cdef floating *b
    cdef floating *o
    cdef floating dot
    cdef floating acc[8]
    for r in range(n):
        a = &dp[r, 0]
        b = &p[r, 0]
        o = &ds[r, 0]
        # independent partial sums so the dot product is not one serial chain
        for c in range(8):
            acc[c] = 0
        k = 0
        while k + 8 <= t:
            for c in range(8):
                acc[c] += a[k + c] * b[k + c]
            k += 8
        dot = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
        while k < t:
            dot += a[k] * b[k]
            k += 1
        for k in range(t):
            o[k] = b[k] * (a[k] - dot)


def softmax_backward(dp, p):
    t = dp.shape[-1]
    dp2 = np.ascontiguousarray(dp).reshape(-1, t)
    p2 = np.ascontiguousarray(p, dtype=dp2.dtype).reshape(-1, t)
    ds = np.empty_like(dp2)
    if dp2.dtype == np.float32:
        _softmax_back_rows[float](dp2, p2, ds)
    else:
        _softmax_back_rows[double](dp2, p2, ds)
    return ds.reshape(dp.shape)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
def best_span(logp_start, logp_end, valid, Py_ssize_t max_len):
    cdef double[::1] ls = np.ascontiguousarray(logp_start, dtype=np.float64)
    cdef double[::1] le = np.ascontiguousarray(logp_end, dtype=np.float64)
    cdef unsigned char[::1] ok = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t n = ls.shape[0], i, j, bi = -1, bj = -1
    cdef double best = -INFINITY, sc
    with nogil:
        for i in range(n):
            if not ok[i]:
                continue
            for j in range(i, min(n, i + max_len)):
                if ok[j]:
                    sc = ls[i] + le[j]
                    if sc > best:
                        best = sc
                        bi = i
                        bj = j
    return bi, bj, best


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.initializedcheck(False)
def best_alignment(scores):
    cdef cnp.ndarray arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    if arr.shape[0] < arr.shape[1]:
        arr = arr.T
    cdef double[:, ::1] sc = np.ascontiguousarray(arr)
    cdef Py_ssize_t n_big = sc.shape[0], n_small = sc.shape[1]
    cdef Py_ssize_t size = (<Py_ssize_t>1) << n_small, r, mask, c, bit
    cdef double[::1] dp = np.full(size, -INFINITY)
    cdef double[::1] nxt = np.empty(size)
    cdef double base, v, out = -INFINITY
    dp[0] = 0.0
    with nogil:
        for r in range(n_big):
            nxt[:] = dp
            for mask in range(size):
                base = dp[mask]
                if base == -INFINITY:
                    continue
                for c in range(n_small):
                    bit = (<Py_ssize_t>1) << c
                    if not (mask & bit):
                        v = base + sc[r, c]
                        if v > nxt[mask | bit]:
                            nxt[mask | bit] = v
            dp[:] = nxt
        for mask in range(size):
            if dp[mask] > out:
                out = dp[mask]
    return out
