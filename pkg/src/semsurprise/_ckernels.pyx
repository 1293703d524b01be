# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_pykernels`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY

cnp.import_array()


cdef inline double _row_lse(const double[:, ::1] M, const double[::1] g,
                            Py_ssize_t i, Py_ssize_t K) nogil:
    cdef Py_ssize_t k
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef double v
    for k in range(K):
        v = M[i, k] + g[k]
        if v > m:
            m = v
    for k in range(K):
        s += exp(M[i, k] + g[k] - m)
    return m + log(s)


cdef inline double _col_lse(const double[:, ::1] M, const double[::1] f,
                            Py_ssize_t k, Py_ssize_t B) nogil:
    cdef Py_ssize_t i
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef double v
    for i in range(B):
        v = M[i, k] + f[i]
        if v > m:
            m = v
    for i in range(B):
        s += exp(M[i, k] + f[i] - m)
    return m + log(s)


def sinkhorn_log(const double[:, ::1] sim, double epsilon, int max_iters, double tol):
    cdef Py_ssize_t B = sim.shape[0]
    cdef Py_ssize_t K = sim.shape[1]
    cdef Py_ssize_t i, k
    cdef int it = 0
    cdef double log_a = -log(<double>B)
    cdef double log_b = -log(<double>K)
    cdef double err, colsum, target = (<double>B) / (<double>K)

    M_arr = np.empty((B, K), dtype=np.float64)
    cdef double[:, ::1] M = M_arr
    f_arr = np.zeros(B, dtype=np.float64)
    g_arr = np.zeros(K, dtype=np.float64)
    cdef double[::1] f = f_arr
    cdef double[::1] g = g_arr
    for i in range(B):
        for k in range(K):
            M[i, k] = sim[i, k] / epsilon

    out_arr = np.empty((B, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    with nogil:
        while it < max_iters:
            it += 1
            for k in range(K):
                g[k] = log_b - _col_lse(M, f, k, B)
            for i in range(B):
                f[i] = log_a - _row_lse(M, g, i, K)
            err = 0.0
            for k in range(K):
                colsum = 0.0
                for i in range(B):
                    colsum += exp(M[i, k] + f[i] + g[k])
                colsum = colsum * B
                if fabs(colsum - target) > err:
                    err = fabs(colsum - target)
            if err < tol:
                break
        for i in range(B):
            for k in range(K):
                out[i, k] = exp(M[i, k] + f[i] + g[k] + log(<double>B))
    return out_arr, it


def group_distance_sums(const double[:, ::1] X, const long[::1] groups, Py_ssize_t G):
    cdef Py_ssize_t N = X.shape[0]
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t i, j, d
    cdef long a, b
    cdef double acc, diff
    sums_arr = np.zeros((G, G), dtype=np.float64)
    cdef double[:, ::1] sums = sums_arr
    with nogil:
        for i in range(N):
            a = groups[i]
            for j in range(i + 1, N):
                b = groups[j]
                acc = 0.0
                for d in range(D):
                    diff = X[i, d] - X[j, d]
                    acc += diff * diff
                acc = sqrt(acc)
                if a == b:
                    sums[a, a] += acc
                else:
                    sums[a, b] += acc
                    sums[b, a] += acc
    return sums_arr


def nearest_two(const double[:, ::1] Q, const double[:, ::1] R, const long[::1] rep_class):
    cdef Py_ssize_t M = Q.shape[0]
    cdef Py_ssize_t NR = R.shape[0]
    cdef Py_ssize_t D = Q.shape[1]
    cdef Py_ssize_t q, r, d, best
    cdef double acc, diff, d1, d2
    cdef long c1
    d1_arr = np.empty(M, dtype=np.float64)
    d2_arr = np.empty(M, dtype=np.float64)
    idx_arr = np.empty(M, dtype=np.int64)
    dist_arr = np.empty(NR, dtype=np.float64)
    cdef double[::1] o1 = d1_arr
    cdef double[::1] o2 = d2_arr
    cdef long long[::1] oi = idx_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        for q in range(M):
            best = 0
            for r in range(NR):
                acc = 0.0
                for d in range(D):
                    diff = Q[q, d] - R[r, d]
                    acc += diff * diff
                dist[r] = sqrt(acc)
                if dist[r] < dist[best]:
                    best = r
            d1 = dist[best]
            c1 = rep_class[best]
            d2 = INFINITY
            for r in range(NR):
                if rep_class[r] != c1 and dist[r] < d2:
                    d2 = dist[r]
            o1[q] = d1
            o2[q] = d2
            oi[q] = best
    return d1_arr, d2_arr, idx_arr
