# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled raster kernels.

Every routine here has a numpy twin in ``_pykernels`` that performs the same
floating-point operations in the same order; the two backends must agree
bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


def warp_bilinear(const unsigned char[:, :, ::1] src, const double[:, ::1] hinv,
                  Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], nc = src.shape[2]
    out = np.zeros((out_h, out_w, nc), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] dst = out
    cdef double h00 = hinv[0, 0], h01 = hinv[0, 1], h02 = hinv[0, 2]
    cdef double h10 = hinv[1, 0], h11 = hinv[1, 1], h12 = hinv[1, 2]
    cdef double h20 = hinv[2, 0], h21 = hinv[2, 1], h22 = hinv[2, 2]
    cdef double lo_x = -0.5, hi_x = w - 0.5, lo_y = -0.5, hi_y = h - 0.5
    cdef Py_ssize_t i, j, c, x0, y0, x1, y1
    cdef double fi, fj, den, x, y, fx, fy, top, bot, v
    with nogil:
        for j in range(out_h):
            fj = <double>j
            for i in range(out_w):
                fi = <double>i
                den = h20 * fi + h21 * fj + h22
                if fabs(den) <= 1e-12:
                    continue
                x = (h00 * fi + h01 * fj + h02) / den
                y = (h10 * fi + h11 * fj + h12) / den
                if not (x >= lo_x and x < hi_x and y >= lo_y and y < hi_y):
                    continue
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                fx = x - x0
                fy = y - y0
                x1 = x0 + 1
                y1 = y0 + 1
                if x0 < 0:
                    x0 = 0
                if y0 < 0:
                    y0 = 0
                if x1 > w - 1:
                    x1 = w - 1
                if y1 > h - 1:
                    y1 = h - 1
                for c in range(nc):
                    top = src[y0, x0, c] * (1.0 - fx) + src[y0, x1, c] * fx
                    bot = src[y1, x0, c] * (1.0 - fx) + src[y1, x1, c] * fx
                    v = floor(top * (1.0 - fy) + bot * fy + 0.5)
                    if v > 255.0:
                        v = 255.0
                    dst[j, i, c] = <unsigned char>v
    return out


def warp_nearest(const unsigned char[:, ::1] src, const double[:, ::1] hinv,
                 Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    out = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef unsigned char[:, ::1] dst = out
    cdef double h00 = hinv[0, 0], h01 = hinv[0, 1], h02 = hinv[0, 2]
    cdef double h10 = hinv[1, 0], h11 = hinv[1, 1], h12 = hinv[1, 2]
    cdef double h20 = hinv[2, 0], h21 = hinv[2, 1], h22 = hinv[2, 2]
    cdef double lo_x = -0.5, hi_x = w - 0.5, lo_y = -0.5, hi_y = h - 0.5
    cdef Py_ssize_t i, j, xi, yi
    cdef double fi, fj, den, x, y
    with nogil:
        for j in range(out_h):
            fj = <double>j
            for i in range(out_w):
                fi = <double>i
                den = h20 * fi + h21 * fj + h22
                if fabs(den) <= 1e-12:
                    continue
                x = (h00 * fi + h01 * fj + h02) / den
                y = (h10 * fi + h11 * fj + h12) / den
                if not (x >= lo_x and x < hi_x and y >= lo_y and y < hi_y):
                    continue
                xi = <Py_ssize_t>floor(x + 0.5)
                yi = <Py_ssize_t>floor(y + 0.5)
                if xi > w - 1:
                    xi = w - 1
                if yi > h - 1:
                    yi = h - 1
                dst[j, i] = src[yi, xi]
    return out


def iou_counts(const unsigned char[:, ::1] a, const unsigned char[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0] * a.shape[1], k
    cdef long long inter = 0, uni = 0
    cdef unsigned char x, y
    if n == 0:
        return 0, 0
    cdef const unsigned char* pa = &a[0, 0]
    cdef const unsigned char* pb = &b[0, 0]
    with nogil:
        for k in range(n):
            x = pa[k] != 0
            y = pb[k] != 0
            inter += x & y
            uni += x | y
    return inter, uni


cdef void _cross_pass(const unsigned char[:, ::1] src, unsigned char[:, ::1] dst,
                      bint dilate) noexcept nogil:
    # both buffers carry a one-pixel zero border, so out-of-bounds reads are 0
    cdef Py_ssize_t hp = src.shape[0], wp = src.shape[1], i, j
    cdef const unsigned char* up
    cdef const unsigned char* mid
    cdef const unsigned char* down
    cdef unsigned char* out
    for j in range(1, hp - 1):
        up = &src[j - 1, 0]
        mid = &src[j, 0]
        down = &src[j + 1, 0]
        out = &dst[j, 0]
        if dilate:
            for i in range(1, wp - 1):
                out[i] = mid[i] | up[i] | down[i] | mid[i - 1] | mid[i + 1]
        else:
            for i in range(1, wp - 1):
                out[i] = mid[i] & up[i] & down[i] & mid[i - 1] & mid[i + 1]


def morph_cross(src, int iterations, bint dilate):
    bits = np.asarray(src) != 0
    cdef Py_ssize_t h = bits.shape[0], w = bits.shape[1]
    a = np.zeros((h + 2, w + 2), dtype=np.uint8)
    a[1:h + 1, 1:w + 1] = bits
    b = np.zeros_like(a)
    cdef unsigned char[:, ::1] va, vb
    cdef int k
    for k in range(iterations):
        va = a
        vb = b
        with nogil:
            _cross_pass(va, vb, dilate)
        a, b = b, a
    return np.ascontiguousarray(a[1:h + 1, 1:w + 1])
