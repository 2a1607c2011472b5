# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy fallback kernels (see _fallback.py)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()

HYBRID = 0
TYPE_ONLY = 1
DIST_ONLY = 2
HYBRID_STAR = 3
MASK = 4

cdef int _HYBRID = 0
cdef int _TYPE_ONLY = 1
cdef int _DIST_ONLY = 2
cdef int _HYBRID_STAR = 3
cdef int _MASK = 4

cdef int _ROLE_FORM_TITLE = 0
cdef int _ROLE_FORM_DESC = 1


cdef inline double _dist(long rq, long bq, long rk, long bk) noexcept:
    if rq == _ROLE_FORM_TITLE or rk == _ROLE_FORM_TITLE:
        return 0.0
    return fabs(<double> bq - <double> bk)


def bias_matrix(q_roles, q_blocks, k_roles, k_blocks, L, double mu, double lam,
                int variant, double same_block_bias):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] qr = np.ascontiguousarray(q_roles, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] qb = np.ascontiguousarray(q_blocks, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kr = np.ascontiguousarray(k_roles, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kb = np.ascontiguousarray(k_blocks, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] table = np.ascontiguousarray(L, dtype=np.float64)
    cdef Py_ssize_t n = qr.shape[0]
    cdef Py_ssize_t m = kr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double value
    cdef bint allowed
    for i in range(n):
        for j in range(m):
            if variant == _MASK:
                allowed = (qb[i] == kb[j]
                           or qr[i] == _ROLE_FORM_TITLE or qr[i] == _ROLE_FORM_DESC
                           or kr[j] == _ROLE_FORM_TITLE or kr[j] == _ROLE_FORM_DESC)
                out[i, j] = 0.0 if allowed else -INFINITY
                continue
            value = 0.0
            if variant == _HYBRID or variant == _TYPE_ONLY or variant == _HYBRID_STAR:
                value += table[qr[i], kr[j]]
            if variant == _HYBRID or variant == _DIST_ONLY:
                value += mu * exp(-lam * _dist(qr[i], qb[i], kr[j], kb[j]))
            if variant == _HYBRID_STAR and qb[i] == kb[j]:
                value += same_block_bias
            out[i, j] = value
    return out


def bias_matrix_grads(upstream, q_roles, q_blocks, k_roles, k_blocks,
                      double mu, double lam, int variant):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] up = np.ascontiguousarray(upstream, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] qr = np.ascontiguousarray(q_roles, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] qb = np.ascontiguousarray(q_blocks, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kr = np.ascontiguousarray(k_roles, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kb = np.ascontiguousarray(k_blocks, dtype=np.int64)
    cdef Py_ssize_t n = qr.shape[0]
    cdef Py_ssize_t m = kr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dL = np.zeros((9, 9), dtype=np.float64)
    cdef double dmu = 0.0, dlam = 0.0, dsbb = 0.0
    cdef Py_ssize_t i, j
    cdef double g, d, decay
    cdef bint want_table = variant == _HYBRID or variant == _TYPE_ONLY or variant == _HYBRID_STAR
    cdef bint want_decay = variant == _HYBRID or variant == _DIST_ONLY
    for i in range(n):
        for j in range(m):
            g = up[i, j]
            if want_table:
                dL[qr[i], kr[j]] += g
            if want_decay:
                d = _dist(qr[i], qb[i], kr[j], kb[j])
                decay = exp(-lam * d)
                dmu += g * decay
                dlam += g * (-mu) * d * decay
            if variant == _HYBRID_STAR and qb[i] == kb[j]:
                dsbb += g
    return dL, dmu, dlam, dsbb


def lcs_length(a, b):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] xs = np.ascontiguousarray(a, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ys = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t m = ys.shape[0]
    if n == 0 or m == 0:
        return 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] prev = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cur = np.zeros(m + 1, dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef cnp.int64_t best
    for i in range(n):
        cur[0] = 0
        for j in range(m):
            if xs[i] == ys[j]:
                best = prev[j] + 1
            else:
                best = prev[j + 1] if prev[j + 1] > cur[j] else cur[j]
            cur[j + 1] = best
        prev, cur = cur, prev
    return int(prev[m])
