# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (hot inner loops of the network).

Same contracts as numpy_backend: conv weights (Co, Ci, k), transposed-conv
weights (Ci, Co, k), zero padding (k-1)//2, stride in {1, 2}. The valid tap
range is hoisted out of the inner loops, so they are branch-free and run over
contiguous output positions; accumulation per element is a serial sum in the
array dtype, so results are deterministic. All loops release the GIL.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double

name = "compiled"


cdef inline Py_ssize_t _i_lo(Py_ssize_t off, Py_ssize_t stride) noexcept nogil:
    # smallest i >= 0 with stride*i + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


cdef inline Py_ssize_t _i_hi(Py_ssize_t off, Py_ssize_t stride,
                             Py_ssize_t limit, Py_ssize_t n) noexcept nogil:
    # smallest bound <= n with stride*i + off < limit for all i < bound
    cdef Py_ssize_t hi = (limit - off + stride - 1) // stride
    return hi if hi < n else n


def conv1d_fwd(x, w, b, int stride):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    y = np.zeros((x.shape[0], w.shape[0], (x.shape[2] + stride - 1) // stride),
                 dtype=x.dtype)
    _conv_fwd(x, w, y, stride)
    if b is not None:
        y += b[None, :, None]
    return y


def conv1d_grad_w(x, g, int stride, int k):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    gw = np.zeros((g.shape[1], x.shape[1], k), dtype=x.dtype)
    _conv_grad_w(x, g, gw, stride)
    return gw, g.sum(axis=(0, 2))


def convtr1d_fwd(x, w, b, int stride):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    y = np.zeros((x.shape[0], w.shape[1], stride * x.shape[2]), dtype=x.dtype)
    _convtr_fwd(x, w, y, stride)
    if b is not None:
        y += b[None, :, None]
    return y


def convtr1d_grad_w(x, g, int stride, int k):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    gw = np.zeros((x.shape[1], g.shape[1], k), dtype=x.dtype)
    _convtr_grad_w(x, g, gw, stride)
    return gw, g.sum(axis=(0, 2))


def _conv_fwd(real[:, :, ::1] x, real[:, :, ::1] w, real[:, :, ::1] y,
              int stride):
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Co = w.shape[0], k = w.shape[2], P = y.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t n, o, c, i, j, off, i0, i1
    cdef real wv
    with nogil:
        for n in range(B):
            for o in range(Co):
                for c in range(Ci):
                    for j in range(k):
                        off = j - pad
                        i0 = _i_lo(off, stride)
                        i1 = _i_hi(off, stride, L, P)
                        wv = w[o, c, j]
                        for i in range(i0, i1):
                            y[n, o, i] += wv * x[n, c, stride * i + off]


def _conv_grad_w(real[:, :, ::1] x, real[:, :, ::1] g, real[:, :, ::1] gw,
                 int stride):
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Co = g.shape[1], P = g.shape[2], k = gw.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t n, o, c, i, j, off, i0, i1
    cdef real acc
    with nogil:
        for o in range(Co):
            for c in range(Ci):
                for j in range(k):
                    off = j - pad
                    i0 = _i_lo(off, stride)
                    i1 = _i_hi(off, stride, L, P)
                    acc = 0
                    for n in range(B):
                        for i in range(i0, i1):
                            acc += g[n, o, i] * x[n, c, stride * i + off]
                    gw[o, c, j] = acc


def _convtr_fwd(real[:, :, ::1] x, real[:, :, ::1] w, real[:, :, ::1] y,
                int stride):
    # scatter form: y[n, o, stride*i + j - pad] += w[c, o, j] * x[n, c, i]
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Co = w.shape[1], k = w.shape[2], T = y.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t n, o, c, i, j, off, i0, i1
    cdef real wv
    with nogil:
        for n in range(B):
            for c in range(Ci):
                for o in range(Co):
                    for j in range(k):
                        off = j - pad
                        i0 = _i_lo(off, stride)
                        i1 = _i_hi(off, stride, T, L)
                        wv = w[c, o, j]
                        for i in range(i0, i1):
                            y[n, o, stride * i + off] += wv * x[n, c, i]


def _convtr_grad_w(real[:, :, ::1] x, real[:, :, ::1] g, real[:, :, ::1] gw,
                   int stride):
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Co = g.shape[1], T = g.shape[2], k = gw.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t n, o, c, i, j, off, i0, i1
    cdef real acc
    with nogil:
        for c in range(Ci):
            for o in range(Co):
                for j in range(k):
                    off = j - pad
                    i0 = _i_lo(off, stride)
                    i1 = _i_hi(off, stride, T, L)
                    acc = 0
                    for n in range(B):
                        for i in range(i0, i1):
                            acc += x[n, c, i] * g[n, o, stride * i + off]
                    gw[c, o, j] = acc
