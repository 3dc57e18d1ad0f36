# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-CRF kernels.

Features of all Gaussian kernels are concatenated column-wise; kernel ``m``
owns columns ``offsets[m]:offsets[m + 1]`` with bandwidths ``thetas``. The
combined pair weight is ``sum_m w_m exp(-0.5 sum_d ((f_id - f_jd) / theta_d)^2)``.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport exp


cdef inline double pair_weight(const double[:, ::1] f, const double[::1] thetas,
                               const long[::1] offsets, const double[::1] weights,
                               Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t m, d
    cdef double acc = 0.0, s, t
    for m in range(weights.shape[0]):
        s = 0.0
        for d in range(offsets[m], offsets[m + 1]):
            t = (f[i, d] - f[j, d]) / thetas[d]
            s = s + t * t
        acc = acc + weights[m] * exp(-0.5 * s)
    return acc


def pair_messages(const double[:, ::1] feats, const double[::1] thetas,
                  const long[::1] offsets, const double[::1] weights,
                  const double[:, ::1] q, int n_threads=1):
    """``out[i, c] = sum_{j != i} k(i, j) q[j, c]``, exact O(N^2).

    Single-threaded calls visit each unordered pair once and credit both
    ends; every row still accumulates its terms in ascending ``j``, so both
    paths return identical bits.
    """
    cdef Py_ssize_t n = feats.shape[0], nc = q.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double kij
    out_arr = np.zeros((n, nc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n_threads <= 1:
        with nogil:
            for i in range(n):
                for j in range(i + 1, n):
                    kij = pair_weight(feats, thetas, offsets, weights, i, j)
                    for c in range(nc):
                        out[i, c] += kij * q[j, c]
                        out[j, c] += kij * q[i, c]
        return out_arr
    for i in prange(n, nogil=True, num_threads=n_threads, schedule="static"):
        for j in range(n):
            if j == i:
                continue
            kij = pair_weight(feats, thetas, offsets, weights, i, j)
            for c in range(nc):
                out[i, c] += kij * q[j, c]
    return out_arr


def potts_pairwise(const double[:, ::1] feats, const double[::1] thetas,
                   const long[::1] offsets, const double[::1] weights,
                   const long[::1] labels):
    """Sum of pair weights over ``i < j`` with different labels, raster order."""
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t i, j
    cdef double total = 0.0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] != labels[j]:
                    total = total + pair_weight(feats, thetas, offsets, weights, i, j)
    return total
