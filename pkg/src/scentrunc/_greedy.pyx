# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled greedy scoring step; see ``_greedy_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def best_candidate(const double[:, ::1] cloud_t,
                   const double[::1] fmax, const double[::1] fmin,
                   const double[::1] smax, const double[::1] smin,
                   taken, const cnp.intp_t[::1] order):
    cdef const unsigned char[::1] tk = np.ascontiguousarray(taken, dtype=np.uint8)
    cdef Py_ssize_t N = cloud_t.shape[0]
    cdef Py_ssize_t R = order.shape[0]
    cdef Py_ssize_t j, r, k
    cdef double best = INFINITY, score, c, up, down, e
    cdef Py_ssize_t best_idx = -1
    with nogil:
        for j in range(N):
            if tk[j]:
                continue
            score = 0.0
            for r in range(R):
                k = order[r]
                c = cloud_t[j, k]
                up = fmax[k] - (smax[k] if smax[k] > c else c)
                down = (smin[k] if smin[k] < c else c) - fmin[k]
                e = up if up > down else down
                if e > score:
                    score = e
                    if score >= best:
                        break
            if score < best:
                best = score
                best_idx = j
    return best_idx, best


def farthest_from(const double[:, ::1] cloud_t, Py_ssize_t ref):
    cdef Py_ssize_t N = cloud_t.shape[0]
    cdef Py_ssize_t R = cloud_t.shape[1]
    cdef Py_ssize_t j, k, arg = 0
    cdef double best = -1.0, d, dj
    with nogil:
        for j in range(N):
            dj = 0.0
            for k in range(R):
                d = cloud_t[j, k] - cloud_t[ref, k]
                if d < 0:
                    d = -d
                if d > dj:
                    dj = d
            if dj > best:
                best = dj
                arg = j
    return arg
