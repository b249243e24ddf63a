# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Same signatures and semantics; inputs must be float64 C-contiguous.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

DEF DEGENERATE_VAR = 1e-12


def sqdist(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                acc += t * t
            o[i, j] = acc
    return out


def sqdist_backward(const double[:, ::1] g, const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double gij, t
    ga_arr = np.zeros((n, d))
    gb_arr = np.zeros((m, d))
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    for i in range(n):
        for j in range(m):
            gij = 2.0 * g[i, j]
            if gij == 0.0:
                continue
            for k in range(d):
                t = gij * (a[i, k] - b[j, k])
                ga[i, k] += t
                gb[j, k] -= t
    return ga_arr, gb_arr


def log_softmax(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s, lse
    out = np.empty((n, c))
    cdef double[:, ::1] o = out
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, c):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(c):
            s += exp(x[i, j] - mx)
        lse = log(s)
        for j in range(c):
            o[i, j] = (x[i, j] - mx) - lse
    return out


def log_softmax_backward(const double[:, ::1] g, const double[:, ::1] y):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    out = np.empty((n, c))
    cdef double[:, ::1] o = out
    for i in range(n):
        s = 0.0
        for j in range(c):
            s += g[i, j]
        for j in range(c):
            o[i, j] = g[i, j] - exp(y[i, j]) * s
    return out


def column_stats(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mu, mn, mx, dv, m2, m3, m4
    out = np.zeros((c, 5))
    cdef double[:, ::1] o = out
    if n == 0:
        return out
    for j in range(c):
        mu = 0.0
        mn = x[0, j]
        mx = x[0, j]
        for i in range(n):
            mu += x[i, j]
            if x[i, j] < mn:
                mn = x[i, j]
            if x[i, j] > mx:
                mx = x[i, j]
        mu /= n
        m2 = 0.0
        m3 = 0.0
        m4 = 0.0
        for i in range(n):
            dv = x[i, j] - mu
            m2 += dv * dv
            m3 += dv * dv * dv
            m4 += dv * dv * dv * dv
        m2 /= n
        m3 /= n
        m4 /= n
        o[j, 0] = mn
        o[j, 1] = mx
        o[j, 2] = m2
        if m2 >= DEGENERATE_VAR:
            o[j, 3] = m3 / (m2 * sqrt(m2))
            o[j, 4] = m4 / (m2 * m2)
    return out


def nearest_index(const double[:, ::1] query, const double[:, ::1] support):
    cdef Py_ssize_t n = query.shape[0], m = support.shape[0], d = query.shape[1]
    cdef Py_ssize_t i, j, k, best
    cdef double acc, t, best_d
    out = np.zeros(n, dtype=np.int64)
    cdef long long[::1] o = out
    for i in range(n):
        best = 0
        best_d = 0.0
        for j in range(m):
            acc = 0.0
            for k in range(d):
                t = query[i, k] - support[j, k]
                acc += t * t
            if j == 0 or acc < best_d:
                best_d = acc
                best = j
        o[i] = best
    return out


def conv3x3(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0]
    cdef Py_ssize_t b, o, c, h, ww, i, j, hh, wc
    cdef double acc
    out = np.zeros((B, O, H, W))
    cdef double[:, :, :, ::1] y = out
    for b in range(B):
        for o in range(O):
            for h in range(H):
                for ww in range(W):
                    acc = 0.0
                    for c in range(C):
                        for i in range(3):
                            hh = h + i - 1
                            if hh < 0 or hh >= H:
                                continue
                            for j in range(3):
                                wc = ww + j - 1
                                if wc < 0 or wc >= W:
                                    continue
                                acc += x[b, c, hh, wc] * w[o, c, i, j]
                    y[b, o, h, ww] = acc
    return out


def conv3x3_backward(const double[:, :, :, ::1] g, const double[:, :, :, ::1] x,
                     const double[:, :, :, ::1] w):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0]
    cdef Py_ssize_t b, o, c, h, ww, i, j, hh, wc
    cdef double gv
    gx_arr = np.zeros((B, C, H, W))
    gw_arr = np.zeros((O, C, 3, 3))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    for b in range(B):
        for o in range(O):
            for h in range(H):
                for ww in range(W):
                    gv = g[b, o, h, ww]
                    if gv == 0.0:
                        continue
                    for c in range(C):
                        for i in range(3):
                            hh = h + i - 1
                            if hh < 0 or hh >= H:
                                continue
                            for j in range(3):
                                wc = ww + j - 1
                                if wc < 0 or wc >= W:
                                    continue
                                gw[o, c, i, j] += gv * x[b, c, hh, wc]
                                gx[b, c, hh, wc] += gv * w[o, c, i, j]
    return gx_arr, gw_arr


def maxpool2(const double[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t Ho = x.shape[2] // 2, Wo = x.shape[3] // 2
    cdef Py_ssize_t b, c, h, w, k, best
    cdef double v, bv
    out = np.empty((B, C, Ho, Wo))
    idx_arr = np.empty((B, C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, :, ::1] y = out
    cdef long long[:, :, :, ::1] idx = idx_arr
    for b in range(B):
        for c in range(C):
            for h in range(Ho):
                for w in range(Wo):
                    best = 0
                    bv = x[b, c, 2 * h, 2 * w]
                    for k in range(1, 4):
                        v = x[b, c, 2 * h + k // 2, 2 * w + k % 2]
                        if v > bv:
                            bv = v
                            best = k
                    y[b, c, h, w] = bv
                    idx[b, c, h, w] = best
    return out, idx_arr


def maxpool2_backward(const double[:, :, :, ::1] g, const long long[:, :, :, ::1] idx,
                      Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = g.shape[0], C = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t b, c, h, w, k
    gx_arr = np.zeros((B, C, H, W))
    cdef double[:, :, :, ::1] gx = gx_arr
    for b in range(B):
        for c in range(C):
            for h in range(Ho):
                for w in range(Wo):
                    k = idx[b, c, h, w]
                    gx[b, c, 2 * h + k // 2, 2 * w + k % 2] = g[b, c, h, w]
    return gx_arr
