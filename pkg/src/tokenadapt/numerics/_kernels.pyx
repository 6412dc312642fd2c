# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loop kernels.

Every function here has a numpy twin in ``_fallback`` with the same
signature; ``tokenadapt.numerics`` picks one set at import time.  Inputs are
assumed validated and C-contiguous float64.
"""

import numpy as np

from libc.math cimport cos, exp, pow, sin, sqrt, INFINITY

BACKEND = "compiled"
cdef Py_ssize_t _BLOCK = 64  # keys per online-softmax step


cdef inline double _dot(const double* x, const double* y, Py_ssize_t n) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t t
    for t in range(n):
        acc += x[t] * y[t]
    return acc


cdef inline void _axpy(double alpha, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t t
    for t in range(n):
        y[t] += alpha * x[t]


cdef inline void _scores(const double* qrow, const double* kt, Py_ssize_t d, Py_ssize_t lk,
                         Py_ssize_t j0, Py_ssize_t j1, double scale, double* out) noexcept nogil:
    # kt is one head's keys transposed, (d, lk) row-major.
    # out[j - j0] = scale * sum_t q[t] k[j, t], accumulated in t order like a plain dot
    cdef Py_ssize_t j, t = 0, n = j1 - j0
    cdef double q0, q1, q2, q3
    cdef const double* k0
    cdef const double* k1
    cdef const double* k2
    cdef const double* k3
    for j in range(n):
        out[j] = 0.0
    while t + 4 <= d:
        q0, q1, q2, q3 = qrow[t], qrow[t + 1], qrow[t + 2], qrow[t + 3]
        k0 = kt + t * lk + j0
        k1 = k0 + lk
        k2 = k1 + lk
        k3 = k2 + lk
        for j in range(n):
            out[j] = (((out[j] + q0 * k0[j]) + q1 * k1[j]) + q2 * k2[j]) + q3 * k3[j]
        t += 4
    while t < d:
        _axpy(qrow[t], kt + t * lk + j0, out, n)
        t += 1
    for j in range(n):
        out[j] *= scale


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, k
    out = np.zeros((n, p), dtype=np.float64)
    if n == 0 or m == 0 or p == 0:
        return out
    cdef double[:, ::1] c = out
    cdef double a0, a1, a2, a3
    cdef const double* b0
    cdef const double* b1
    cdef const double* b2
    cdef const double* b3
    cdef double* crow
    cdef Py_ssize_t j
    with nogil:
        for i in range(n):
            crow = &c[i, 0]
            k = 0
            # four rows of b per pass; the sum keeps the k = 0, 1, 2, ... order
            while k + 4 <= m:
                a0, a1, a2, a3 = a[i, k], a[i, k + 1], a[i, k + 2], a[i, k + 3]
                b0, b1, b2, b3 = &b[k, 0], &b[k + 1, 0], &b[k + 2, 0], &b[k + 3, 0]
                for j in range(p):
                    crow[j] = (((crow[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j]
                k += 4
            while k < m:
                _axpy(a[i, k], &b[k, 0], crow, p)
                k += 1
    return out


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, total
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            for j in range(m):
                y[i, j] = x[i, j] - mx
    np.exp(out, out=out)
    with nogil:
        for i in range(n):
            total = 0.0
            for j in range(m):
                total += y[i, j]
            for j in range(m):
                y[i, j] /= total
    return out


def rms_norm(const double[:, ::1] x, const double[::1] gain, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, inv
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(m):
                acc += x[i, j] * x[i, j]
            inv = 1.0 / sqrt(acc / m + eps)
            for j in range(m):
                y[i, j] = x[i, j] * inv * gain[j]
    return out


def cosine_sim_matrix(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef Py_ssize_t i, j, t
    cdef double acc, v
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] norms = norms_arr
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] s = out
    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(m):
                acc += x[i, t] * x[i, t]
            norms[i] = sqrt(acc)
        for i in range(n):
            s[i, i] = 1.0
            if norms[i] == 0.0:
                continue
            for j in range(i + 1, n):
                if norms[j] == 0.0:
                    continue
                acc = 0.0
                for t in range(m):
                    acc += x[i, t] * x[j, t]
                v = acc / (norms[i] * norms[j])
                if v > 1.0:
                    v = 1.0
                elif v < -1.0:
                    v = -1.0
                s[i, j] = v
                s[j, i] = v
    return out, norms_arr == 0.0


def rope_apply(const double[:, :, ::1] x, const double[::1] positions, double theta_base):
    cdef Py_ssize_t h = x.shape[0], n = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t half = d // 2
    cdef Py_ssize_t a, i, p
    cdef double ang, c, s, x0, x1
    freq_arr = np.empty(half, dtype=np.float64)
    cdef double[::1] freq = freq_arr
    out = np.empty((h, n, d), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    with nogil:
        for p in range(half):
            freq[p] = pow(theta_base, -2.0 * p / d)
        for i in range(n):
            for p in range(half):
                ang = positions[i] * freq[p]
                c = cos(ang)
                s = sin(ang)
                for a in range(h):
                    x0 = x[a, i, 2 * p]
                    x1 = x[a, i, 2 * p + 1]
                    y[a, i, 2 * p] = x0 * c - x1 * s
                    y[a, i, 2 * p + 1] = x0 * s + x1 * c
    return out


def attention_probs(const double[:, :, ::1] q, const double[:, :, ::1] k, bint causal, double scale):
    """Materialized per-head softmax(q k^T * scale), optionally causal."""
    cdef Py_ssize_t h = q.shape[0], lq = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t lk = k.shape[1]
    cdef Py_ssize_t a, i, j, stop
    cdef double mx, total
    cdef double* row
    out = np.zeros((h, lq, lk), dtype=np.float64)
    if h == 0 or lq == 0 or lk == 0:
        return out
    cdef double[:, :, ::1] w = out
    cdef double[:, :, ::1] kt = np.ascontiguousarray(np.asarray(k).transpose(0, 2, 1))
    with nogil:
        for a in range(h):
            for i in range(lq):
                stop = i + 1 if causal else lk
                row = &w[a, i, 0]
                _scores(&q[a, i, 0], &kt[a, 0, 0], d, lk, 0, stop, scale, row)
                mx = -INFINITY
                for j in range(stop):
                    if row[j] > mx:
                        mx = row[j]
                for j in range(stop):
                    row[j] -= mx
                for j in range(stop, lk):
                    row[j] = -INFINITY
    # numpy's vectorized exp is several times faster than calling libm per entry
    np.exp(out, out=out)
    with nogil:
        for a in range(h):
            for i in range(lq):
                row = &w[a, i, 0]
                total = 0.0
                for j in range(lk):
                    total += row[j]
                for j in range(lk):
                    row[j] = row[j] / total
    return out


def attention_streaming(const double[:, :, ::1] q, const double[:, :, ::1] k,
                        const double[:, :, ::1] v, bint causal, double scale):
    """Per-head attention output with an online softmax over key blocks; no L x L buffer."""
    cdef Py_ssize_t h = q.shape[0], lq = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t lk = k.shape[1], dv = v.shape[2]
    cdef Py_ssize_t a, i, j, j0, j1, stop, first
    cdef double bmx, corr
    cdef double* orow
    cdef double* srow
    out = np.zeros((h, lq, dv), dtype=np.float64)
    if h == 0 or lq == 0 or lk == 0:
        return out
    cdef double[:, :, ::1] o = out
    cdef double[:, :, ::1] kt = np.ascontiguousarray(np.asarray(k).transpose(0, 2, 1))
    tile_arr = np.empty((lq, _BLOCK), dtype=np.float64)
    cdef double[:, ::1] tile = tile_arr
    cdef double[::1] mx = np.empty(lq, dtype=np.float64)
    cdef double[::1] total = np.empty(lq, dtype=np.float64)
    for a in range(h):
        mx[:] = -INFINITY
        total[:] = 0.0
        j0 = 0
        while j0 < lk:
            j1 = j0 + _BLOCK if j0 + _BLOCK < lk else lk
            # under the causal mask, queries before j0 see nothing in this block
            first = j0 if causal else 0
            if first >= lq:
                break
            with nogil:
                for i in range(first, lq):
                    stop = j1 if not causal or i + 1 >= j1 else i + 1
                    srow = &tile[i, 0]
                    _scores(&q[a, i, 0], &kt[a, 0, 0], d, lk, j0, stop, scale, srow)
                    for j in range(stop - j0, j1 - j0):
                        srow[j] = -INFINITY
                    bmx = mx[i]
                    for j in range(stop - j0):
                        if srow[j] > bmx:
                            bmx = srow[j]
                    if bmx > mx[i]:
                        corr = exp(mx[i] - bmx)
                        total[i] *= corr
                        orow = &o[a, i, 0]
                        for j in range(dv):
                            orow[j] *= corr
                        mx[i] = bmx
                    for j in range(j1 - j0):
                        srow[j] -= bmx
            blk = tile_arr[first:, :j1 - j0]
            np.exp(blk, out=blk)
            with nogil:
                for i in range(first, lq):
                    srow = &tile[i, 0]
                    orow = &o[a, i, 0]
                    for j in range(j1 - j0):
                        total[i] += srow[j]
                        _axpy(srow[j], &v[a, j0 + j, 0], orow, dv)
            j0 = j1
        with nogil:
            for i in range(lq):
                orow = &o[a, i, 0]
                for j in range(dv):
                    orow[j] /= total[i]
    return out
