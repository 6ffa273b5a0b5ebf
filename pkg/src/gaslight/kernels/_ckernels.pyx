# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fmod

cnp.import_array()


def likelihood_matrix(const double[::1] phi, double lower, double spacing, double length,
                      const double[::1] h_nodes, const double[::1] y, const double[::1] denom):
    cdef Py_ssize_t T = y.shape[0], n = h_nodes.shape[0], m = phi.shape[0]
    cdef Py_ssize_t t, j, i
    cdef double v, pos, frac, inv
    out_arr = np.empty((T, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for t in range(T):
            inv = 1.0 / denom[t]
            for j in range(n):
                v = fmod(y[t] - h_nodes[j] - lower, length)
                if v < 0:
                    v = v + length
                pos = v / spacing
                i = <Py_ssize_t>pos
                if i > m - 2:
                    i = m - 2
                frac = pos - i
                out[t, j] = ((1.0 - frac) * phi[i] + frac * phi[i + 1]) * inv
    return out_arr


def filter_step(const double[:, ::1] sigma, const double[:, ::1] lik,
                const cnp.int64_t[::1] u_idx, const double[:, :, ::1] kernels):
    cdef Py_ssize_t T = sigma.shape[0], n = sigma.shape[1]
    cdef Py_ssize_t t, i, j, a
    cdef double acc
    out_arr = np.empty((T, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] buf = np.empty(n, dtype=np.float64)
    with nogil:
        for t in range(T):
            a = u_idx[t]
            for j in range(n):
                buf[j] = sigma[t, j] * lik[t, j]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc = acc + kernels[a, i, j] * buf[j]
                out[t, i] = acc
    return out_arr


def alpha_argmin(const double[:, ::1] sigma, const double[:, ::1] coeffs, const cnp.int64_t[::1] tags):
    # products go through BLAS in row blocks; the first-minimizer scan is compiled
    cdef Py_ssize_t T = sigma.shape[0], M = coeffs.shape[0]
    cdef Py_ssize_t t, r, best, lo, hi, block = 512
    cdef double bestval
    cdef const double[:, ::1] vals
    tag_arr = np.empty(T, dtype=np.int64)
    val_arr = np.empty(T, dtype=np.float64)
    cdef cnp.int64_t[::1] tag_out = tag_arr
    cdef double[::1] val_out = val_arr
    sig = np.asarray(sigma)
    cT = np.asarray(coeffs).T
    for lo in range(0, T, block):
        hi = min(lo + block, T)
        vals = np.ascontiguousarray(sig[lo:hi] @ cT)
        with nogil:
            for t in range(hi - lo):
                best = 0
                bestval = vals[t, 0]
                for r in range(1, M):
                    if vals[t, r] < bestval:
                        bestval = vals[t, r]
                        best = r
                tag_out[lo + t] = tags[best]
                val_out[lo + t] = bestval
    return tag_arr, val_arr


def categorical_sample(const double[:, ::1] cdf, const cnp.int64_t[::1] rows, const double[::1] u):
    cdef Py_ssize_t T = u.shape[0], n = cdf.shape[1]
    cdef Py_ssize_t t, lo, hi, mid, r
    out_arr = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for t in range(T):
            r = rows[t]
            # first index with cdf > u
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[r, mid] <= u[t]:
                    lo = mid + 1
                else:
                    hi = mid
            if lo > n - 1:
                lo = n - 1
            out[t] = lo
    return out_arr
