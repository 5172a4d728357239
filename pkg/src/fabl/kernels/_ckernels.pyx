# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Operation order matches ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def group_sq_norms(const double[:, ::1] W, const cnp.intp_t[::1] group_id, Py_ssize_t n_groups):
    cdef Py_ssize_t d = W.shape[0], c = W.shape[1], i, j
    cdef cnp.intp_t g
    cdef double v
    out_arr = np.zeros((n_groups, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if group_id.shape[0] != d:
        raise ValueError("group_id length does not match W rows")
    for j in range(c):
        for i in range(d):
            g = group_id[i]
            v = W[i, j]
            out[g, j] += v * v
    return out_arr


def channel_histograms(const double[:, :, ::1] stream, const double[::1] lo,
                       const double[::1] hi, Py_ssize_t bins):
    cdef Py_ssize_t L = stream.shape[0], s = stream.shape[1], ch = stream.shape[2]
    cdef Py_ssize_t t, r, k, b
    cdef double pos
    out_arr = np.zeros((s, ch, bins), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for t in range(L):
        for r in range(s):
            for k in range(ch):
                pos = floor((stream[t, r, k] - lo[k]) / (hi[k] - lo[k]) * bins)
                if pos < 0:
                    b = 0
                elif pos > bins - 1:
                    b = bins - 1
                else:
                    b = <Py_ssize_t>pos
                out[r, k, b] += 1.0
    return out_arr


def affine_scores(const double[:, ::1] X, const double[:, ::1] W, const double[::1] b):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], c = W.shape[1], i, k, j
    cdef double xk
    if W.shape[0] != d or b.shape[0] != c:
        raise ValueError("shape mismatch between X, W and b")
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(c):
            out[i, j] = b[j]
        for k in range(d):
            xk = X[i, k]
            for j in range(c):
                out[i, j] = out[i, j] + xk * W[k, j]
    return out_arr
