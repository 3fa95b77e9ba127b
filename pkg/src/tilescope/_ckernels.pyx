# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pixel kernels; mirrors ``_kernels_py`` exactly."""

import numpy as np
from libc.math cimport floor, rint, cos, sqrt, M_PI


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t m = i % (2 * n)
    if m < 0:
        m += 2 * n
    if m >= n:
        m = 2 * n - 1 - m
    return m


cdef void _axis(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t[::1] i0,
                Py_ssize_t[::1] i1, double[::1] f) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s
    cdef double ratio = <double>n_in / <double>n_out
    for k in range(n_out):
        s = (k + 0.5) * ratio - 0.5
        if s < 0.0:
            s = 0.0
        elif s > n_in - 1:
            s = n_in - 1
        i0[k] = <Py_ssize_t>floor(s)
        i1[k] = i0[k] + 1 if i0[k] + 1 < n_in else n_in - 1
        f[k] = s - i0[k]


def bilinear_resize(const double[:, :, ::1] img, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t y, x, ch
    cdef Py_ssize_t[::1] y0 = np.empty(out_h, dtype=np.intp)
    cdef Py_ssize_t[::1] y1 = np.empty(out_h, dtype=np.intp)
    cdef Py_ssize_t[::1] x0 = np.empty(out_w, dtype=np.intp)
    cdef Py_ssize_t[::1] x1 = np.empty(out_w, dtype=np.intp)
    cdef double[::1] fy = np.empty(out_h)
    cdef double[::1] fx = np.empty(out_w)
    out_arr = np.empty((out_h, out_w, c))
    cdef double[:, :, ::1] out = out_arr
    cdef double top, bot, a, b
    with nogil:
        _axis(h, out_h, y0, y1, fy)
        _axis(w, out_w, x0, x1, fx)
        for y in range(out_h):
            a = fy[y]
            for x in range(out_w):
                b = fx[x]
                for ch in range(c):
                    top = img[y0[y], x0[x], ch] * (1.0 - b) + img[y0[y], x1[x], ch] * b
                    bot = img[y1[y], x0[x], ch] * (1.0 - b) + img[y1[y], x1[x], ch] * b
                    out[y, x, ch] = top * (1.0 - a) + bot * a
    return out_arr


def separable_blur(const double[:, :, ::1] img, const double[::1] kernel):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t nk = kernel.shape[0], r = (nk - 1) // 2
    cdef Py_ssize_t y, x, ch, k, src
    tmp_arr = np.zeros((h, w, c))
    out_arr = np.zeros((h, w, c))
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for k in range(nk):
            for y in range(h):
                src = _reflect(y + k - r, h)
                for x in range(w):
                    for ch in range(c):
                        tmp[y, x, ch] += kernel[k] * img[src, x, ch]
        for k in range(nk):
            for x in range(w):
                src = _reflect(x + k - r, w)
                for y in range(h):
                    for ch in range(c):
                        out[y, x, ch] += kernel[k] * tmp[y, src, ch]
    return out_arr


cdef double _T[8][8]


cdef void _init_dct() noexcept:
    cdef int k, x
    for k in range(8):
        for x in range(8):
            _T[k][x] = cos((2 * x + 1) * k * M_PI / 16.0) * sqrt(2.0 / 8.0)
            if k == 0:
                _T[k][x] /= sqrt(2.0)


_init_dct()


def jpeg_plane(const double[:, ::1] plane, const double[:, ::1] qtable):
    cdef Py_ssize_t h = plane.shape[0], w = plane.shape[1]
    cdef Py_ssize_t by, bx, i, j, k
    cdef double blk[8][8]
    cdef double tmp[8][8]
    cdef double acc
    out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for by in range(0, h, 8):
            for bx in range(0, w, 8):
                # forward: T @ B @ T^T
                for i in range(8):
                    for j in range(8):
                        acc = 0.0
                        for k in range(8):
                            acc = acc + _T[i][k] * plane[by + k, bx + j]
                        tmp[i][j] = acc
                for i in range(8):
                    for j in range(8):
                        acc = 0.0
                        for k in range(8):
                            acc = acc + tmp[i][k] * _T[j][k]
                        blk[i][j] = rint(acc / qtable[i, j]) * qtable[i, j]
                # inverse: T^T @ C @ T
                for i in range(8):
                    for j in range(8):
                        acc = 0.0
                        for k in range(8):
                            acc = acc + _T[k][i] * blk[k][j]
                        tmp[i][j] = acc
                for i in range(8):
                    for j in range(8):
                        acc = 0.0
                        for k in range(8):
                            acc = acc + tmp[i][k] * _T[k][j]
                        out[by + i, bx + j] = acc
    return out_arr
