# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Must agree bit for bit with ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // sh + 1, ow = (w - kw) // sw + 1
    cdef Py_ssize_t k = c * kh * kw
    out_arr = np.empty((n, oh, ow, k), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, ki, kj, i, j, col
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    col = 0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                out[b, i, j, col] = x[b, ci, i * sh + ki, j * sw + kj]
                                col += 1
    return out_arr


def col2im(const double[:, :, :, ::1] cols, tuple x_shape, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = cols.shape[1], ow = cols.shape[2]
    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ci, ki, kj, i, j, col
    # (ki, kj) outermost per element: same summation order as the numpy kernel
    with nogil:
        for b in range(n):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        col = (ci * kh + ki) * kw + kj
                        for i in range(oh):
                            for j in range(ow):
                                dx[b, ci, i * sh + ki, j * sw + kj] += cols[b, i, j, col]
    return dx_arr


def maxpool_forward(const double[:, :, :, ::1] x, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // sh + 1, ow = (w - kw) // sw + 1
    out_arr = np.empty((n, c, oh, ow), dtype=np.float64)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ci, i, j, ki, kj, r, q
    cdef double best, v
    cdef int64_t best_idx
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        r = i * sh
                        q = j * sw
                        best = x[b, ci, r, q]
                        best_idx = r * w + q
                        for ki in range(kh):
                            for kj in range(kw):
                                v = x[b, ci, r + ki, q + kj]
                                # strict '>' keeps the first row-major maximiser
                                if v > best:
                                    best = v
                                    best_idx = (r + ki) * w + q + kj
                        out[b, ci, i, j] = best
                        arg[b, ci, i, j] = best_idx
    return out_arr, arg_arr


def maxpool_backward(const double[:, :, :, ::1] dout, const int64_t[:, :, :, ::1] arg,
                     tuple x_shape, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    dx_arr = np.zeros((n, c, h * w), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ci, i, j
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        dx[b, ci, arg[b, ci, i, j]] += dout[b, ci, i, j]
    return dx_arr.reshape(x_shape)


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_uniform(cnp.ndarray state, Py_ssize_t n):
    cdef uint64_t[::1] st = state
    cdef uint64_t s0 = st[0], s1 = st[1], s2 = st[2], s3 = st[3]
    cdef uint64_t result, t
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            result = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
            out[i] = <double>(result >> 11) * (1.0 / 9007199254740992.0)
    st[0] = s0
    st[1] = s1
    st[2] = s2
    st[3] = s3
    return out_arr
