# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Every routine here has a twin in :mod:`._kernels_py` with identical
semantics; :mod:`.kernels` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

# norm codes shared with the pure-Python twin
DEF NORM_ABS = 0
DEF NORM_EUCLID = 1
DEF NORM_SUP = 2
DEF NORM_MEANABS = 3


def group_moments(const cnp.int64_t[::1] labels,
                  const double[::1] scale,
                  const double[:, ::1] values,
                  Py_ssize_t n_groups):
    """Per-group count, sum and sum of squares of ``scale[i] * values[i, :]``."""
    cdef Py_ssize_t n = values.shape[0], d = values.shape[1]
    cdef Py_ssize_t i, c
    cdef cnp.int64_t g
    cdef double s, v
    counts_arr = np.zeros(n_groups, dtype=np.int64)
    sums_arr = np.zeros((n_groups, d), dtype=np.float64)
    sq_arr = np.zeros((n_groups, d), dtype=np.float64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef double[:, ::1] sums = sums_arr
    cdef double[:, ::1] sq = sq_arr
    if labels.shape[0] != n or scale.shape[0] != n:
        raise ValueError("labels, scale and values must share their first axis")
    with nogil:
        for i in range(n):
            g = labels[i]
            if g < 0 or g >= n_groups:
                with gil:
                    raise IndexError("group label out of range")
            counts[g] += 1
            s = scale[i]
            for c in range(d):
                v = s * values[i, c]
                sums[g, c] += v
                sq[g, c] += v * v
    return counts_arr, sums_arr, sq_arr


cdef inline double _dist(const double[:, ::1] values, Py_ssize_t a,
                         Py_ssize_t b, int code) nogil:
    cdef Py_ssize_t c, d = values.shape[1]
    cdef double acc = 0.0, diff
    if code == NORM_SUP or code == NORM_ABS:
        for c in range(d):
            diff = fabs(values[a, c] - values[b, c])
            if diff > acc:
                acc = diff
        return acc
    if code == NORM_EUCLID:
        for c in range(d):
            diff = values[a, c] - values[b, c]
            acc += diff * diff
        return sqrt(acc)
    for c in range(d):
        acc += fabs(values[a, c] - values[b, c])
    return acc / d


def cell_diameter(const double[:, ::1] values,
                  const cnp.int64_t[::1] members,
                  int norm_code):
    """Largest pairwise distance among ``values[members]`` in the given norm."""
    cdef Py_ssize_t m = members.shape[0], p, q
    cdef double best = 0.0, dist
    with nogil:
        for p in range(m):
            for q in range(p + 1, m):
                dist = _dist(values, members[p], members[q], norm_code)
                if dist > best:
                    best = dist
    return best


def farthest_pair(const double[:, ::1] values,
                  const cnp.int64_t[::1] members,
                  int norm_code):
    """Exact diameter of a cell together with the atoms attaining it."""
    cdef Py_ssize_t m = members.shape[0], p, q
    cdef Py_ssize_t ia = 0, ib = 0
    cdef double best = -1.0, dist
    if m == 0:
        return 0.0, -1, -1
    with nogil:
        for p in range(m):
            for q in range(p, m):
                dist = _dist(values, members[p], members[q], norm_code)
                if dist > best:
                    best = dist
                    ia = p
                    ib = q
    return best, members[ia], members[ib]


def cumulative_trapezoid(const double[:, ::1] paths,
                         const double[:, ::1] integrand,
                         const double[::1] steps):
    """``out[m, k, :] = sum_{j<k} steps[j]/2 * (g_j w_mj + g_{j+1} w_{m,j+1})``.

    ``paths`` is (M, K+1), ``integrand`` is (K+1, D) and ``steps`` is (K,).
    """
    cdef Py_ssize_t M = paths.shape[0], K1 = paths.shape[1]
    cdef Py_ssize_t D = integrand.shape[1]
    cdef Py_ssize_t m, k, c
    cdef double h
    if integrand.shape[0] != K1 or steps.shape[0] != K1 - 1:
        raise ValueError("grid lengths of paths, integrand and steps disagree")
    out_arr = np.zeros((M, K1, D), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for m in range(M):
            for k in range(K1 - 1):
                h = 0.5 * steps[k]
                for c in range(D):
                    out[m, k + 1, c] = out[m, k, c] + h * (
                        integrand[k, c] * paths[m, k]
                        + integrand[k + 1, c] * paths[m, k + 1])
    return out_arr
