# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled merge kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def dd_start(const float[::1] src, double alpha):
    cdef Py_ssize_t n = src.shape[0], j
    hi_arr = np.empty(n, dtype=np.float64)
    lo_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] hi = hi_arr
    with nogil:
        for j in range(n):
            hi[j] = alpha * <double>src[j]
    return hi_arr, lo_arr


def dd_add(double[::1] hi, double[::1] lo, const float[::1] src, double alpha):
    cdef Py_ssize_t n = src.shape[0], j
    cdef double p, s, bb
    if hi.shape[0] != n or lo.shape[0] != n:
        raise ValueError("accumulator length does not match source")
    with nogil:
        for j in range(n):
            p = alpha * <double>src[j]
            s = hi[j] + p
            bb = s - hi[j]
            lo[j] += (hi[j] - (s - bb)) + (p - bb)
            hi[j] = s


def dd_finish(const double[::1] hi, const double[::1] lo):
    cdef Py_ssize_t n = hi.shape[0], j
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    with nogil:
        for j in range(n):
            if lo[j] == 0.0:
                out[j] = <float>hi[j]
            else:
                out[j] = <float>(hi[j] + lo[j])
    return out_arr


def batch_merge(weights, thetas):
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const float[:, ::1] th = np.ascontiguousarray(thetas, dtype=np.float32)
    cdef Py_ssize_t g = w.shape[0], n = w.shape[1], p = th.shape[1]
    cdef Py_ssize_t r, i, j
    cdef double a, q, s, bb, hi, lo
    cdef bint started
    if th.shape[0] != n:
        raise ValueError("weights and thetas disagree on pool size")
    out_arr = np.zeros((g, p), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    with nogil:
        for r in range(g):
            for j in range(p):
                started = False
                hi = 0.0
                lo = 0.0
                for i in range(n):
                    a = w[r, i]
                    if a == 0.0:
                        continue
                    q = a * <double>th[i, j]
                    if not started:
                        hi = q
                        started = True
                    else:
                        s = hi + q
                        bb = s - hi
                        lo += (hi - (s - bb)) + (q - bb)
                        hi = s
                if lo == 0.0:
                    out[r, j] = <float>hi
                else:
                    out[r, j] = <float>(hi + lo)
    return out_arr
