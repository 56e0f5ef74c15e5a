# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot kernels.

Semantics (including operation order, so results match the NumPy backend
bit-for-bit when compiled without FMA contraction) are defined by
``evbos._kernels._py``; keep both in sync.
"""

import numpy as np

cimport cython
from libc.math cimport floor, fmod


cdef inline double _fold(double s, Py_ssize_t n, double* sign) noexcept nogil:
    cdef double period, r
    if n == 1:
        sign[0] = 0.0
        return 0.0
    period = 2.0 * (n - 1)
    r = fmod(s, period)
    if r < 0.0:
        r += period
    if r > n - 1:
        sign[0] = -1.0
        return period - r
    sign[0] = 1.0
    return r


cdef inline Py_ssize_t _reflect_idx(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if n == 1:
        return 0
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


def upsample_bilinear(const double[:, ::1] grid, int patch, int height, int width):
    cdef Py_ssize_t gh = grid.shape[0], gw = grid.shape[1]
    cdef Py_ssize_t x, y
    out_arr = np.empty((height, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    x0_arr = np.empty(width, dtype=np.intp)
    x1_arr = np.empty(width, dtype=np.intp)
    fx_arr = np.empty(width, dtype=np.float64)
    y0_arr = np.empty(height, dtype=np.intp)
    y1_arr = np.empty(height, dtype=np.intp)
    fy_arr = np.empty(height, dtype=np.float64)
    cdef Py_ssize_t[::1] x0 = x0_arr, x1 = x1_arr, y0 = y0_arr, y1 = y1_arr
    cdef double[::1] fx = fx_arr, fy = fy_arr
    cdef double c
    cdef Py_ssize_t i0
    with nogil:
        for x in range(width):
            c = (x + 0.5) / patch - 0.5
            if c < 0.0:
                c = 0.0
            if c > gw - 1:
                c = gw - 1
            i0 = <Py_ssize_t>floor(c)
            if i0 < 0:
                i0 = 0
            if i0 > gw - 1:
                i0 = gw - 1
            x0[x] = i0
            fx[x] = c - i0
            x1[x] = i0 + 1 if i0 + 1 < gw else gw - 1
        for y in range(height):
            c = (y + 0.5) / patch - 0.5
            if c < 0.0:
                c = 0.0
            if c > gh - 1:
                c = gh - 1
            i0 = <Py_ssize_t>floor(c)
            if i0 < 0:
                i0 = 0
            if i0 > gh - 1:
                i0 = gh - 1
            y0[y] = i0
            fy[y] = c - i0
            y1[y] = i0 + 1 if i0 + 1 < gh else gh - 1
        for y in range(height):
            for x in range(width):
                out[y, x] = _lerp2(
                    grid[y0[y], x0[x]], grid[y0[y], x1[x]],
                    grid[y1[y], x0[x]], grid[y1[y], x1[x]],
                    fx[x], fy[y])
    return out_arr


cdef inline double _lerp2(double g00, double g01, double g10, double g11,
                          double fx, double fy) noexcept nogil:
    cdef double top = g00 + fx * (g01 - g00)
    cdef double bot = g10 + fx * (g11 - g10)
    return top + fy * (bot - top)


def upsample_bilinear_adjoint(const double[:, ::1] gbar, int patch, int gh, int gw):
    cdef Py_ssize_t height = gbar.shape[0], width = gbar.shape[1]
    cdef Py_ssize_t x, y, n = gh * gw
    x0_arr = np.empty(width, dtype=np.intp)
    x1_arr = np.empty(width, dtype=np.intp)
    fx_arr = np.empty(width, dtype=np.float64)
    y0_arr = np.empty(height, dtype=np.intp)
    y1_arr = np.empty(height, dtype=np.intp)
    fy_arr = np.empty(height, dtype=np.float64)
    cdef Py_ssize_t[::1] x0 = x0_arr, x1 = x1_arr, y0 = y0_arr, y1 = y1_arr
    cdef double[::1] fx = fx_arr, fy = fy_arr
    b00_arr = np.zeros(n, dtype=np.float64)
    b01_arr = np.zeros(n, dtype=np.float64)
    b10_arr = np.zeros(n, dtype=np.float64)
    b11_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] b00 = b00_arr, b01 = b01_arr, b10 = b10_arr, b11 = b11_arr
    out_arr = np.empty((gh, gw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double c, wy0, wy1, wx0, wx1, g
    cdef Py_ssize_t i0, k, gy_, gx_
    with nogil:
        for x in range(width):
            c = (x + 0.5) / patch - 0.5
            if c < 0.0:
                c = 0.0
            if c > gw - 1:
                c = gw - 1
            i0 = <Py_ssize_t>floor(c)
            if i0 < 0:
                i0 = 0
            if i0 > gw - 1:
                i0 = gw - 1
            x0[x] = i0
            fx[x] = c - i0
            x1[x] = i0 + 1 if i0 + 1 < gw else gw - 1
        for y in range(height):
            c = (y + 0.5) / patch - 0.5
            if c < 0.0:
                c = 0.0
            if c > gh - 1:
                c = gh - 1
            i0 = <Py_ssize_t>floor(c)
            if i0 < 0:
                i0 = 0
            if i0 > gh - 1:
                i0 = gh - 1
            y0[y] = i0
            fy[y] = c - i0
            y1[y] = i0 + 1 if i0 + 1 < gh else gh - 1
        for y in range(height):
            wy0 = 1.0 - fy[y]
            wy1 = fy[y]
            for x in range(width):
                g = gbar[y, x]
                wx0 = 1.0 - fx[x]
                wx1 = fx[x]
                b00[y0[y] * gw + x0[x]] += g * (wy0 * wx0)
                b01[y0[y] * gw + x1[x]] += g * (wy0 * wx1)
                b10[y1[y] * gw + x0[x]] += g * (wy1 * wx0)
                b11[y1[y] * gw + x1[x]] += g * (wy1 * wx1)
        for gy_ in range(gh):
            for gx_ in range(gw):
                k = gy_ * gw + gx_
                out[gy_, gx_] = ((b00[k] + b01[k]) + b10[k]) + b11[k]
    return out_arr


def sobel_xy(const double[:, ::1] q):
    cdef Py_ssize_t h = q.shape[0], w = q.shape[1]
    cdef Py_ssize_t x, y, xm, xp, ym, yp
    gx_arr = np.empty((h, w), dtype=np.float64)
    gy_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr, gy = gy_arr
    with nogil:
        for y in range(h):
            ym = _reflect_idx(y - 1, h)
            yp = _reflect_idx(y + 1, h)
            for x in range(w):
                xm = _reflect_idx(x - 1, w)
                xp = _reflect_idx(x + 1, w)
                gx[y, x] = ((q[ym, xp] + 2.0 * q[y, xp] + q[yp, xp])
                            - (q[ym, xm] + 2.0 * q[y, xm] + q[yp, xm])) * 0.125
                gy[y, x] = ((q[yp, xm] + 2.0 * q[yp, x] + q[yp, xp])
                            - (q[ym, xm] + 2.0 * q[ym, x] + q[ym, xp])) * 0.125
    return gx_arr, gy_arr


cdef void _fold_pad_into(double[:, ::1] z, double[:, ::1] out) noexcept nogil:
    # transpose of np.pad(..., 1, 'reflect'); must mirror the NumPy fold order.
    cdef Py_ssize_t h2 = z.shape[0], w2 = z.shape[1]
    cdef Py_ssize_t h = h2 - 2, w = w2 - 2
    cdef Py_ssize_t x, y, yi0, yi1, xi0, xi1
    for y in range(h):
        for x in range(w):
            out[y, x] = z[y + 1, x + 1]
    if h > 1:
        for x in range(w):
            out[1, x] += z[0, x + 1]
        for x in range(w):
            out[h - 2, x] += z[h2 - 1, x + 1]
    else:
        for x in range(w):
            out[0, x] += z[0, x + 1]
        for x in range(w):
            out[0, x] += z[h2 - 1, x + 1]
    if w > 1:
        for y in range(h):
            out[y, 1] += z[y + 1, 0]
        for y in range(h):
            out[y, w - 2] += z[y + 1, w2 - 1]
    else:
        for y in range(h):
            out[y, 0] += z[y + 1, 0]
        for y in range(h):
            out[y, 0] += z[y + 1, w2 - 1]
    yi0 = 1 if h > 1 else 0
    yi1 = h - 2 if h > 1 else 0
    xi0 = 1 if w > 1 else 0
    xi1 = w - 2 if w > 1 else 0
    out[yi0, xi0] += z[0, 0]
    out[yi0, xi1] += z[0, w2 - 1]
    out[yi1, xi0] += z[h2 - 1, 0]
    out[yi1, xi1] += z[h2 - 1, w2 - 1]


def sobel_xy_adjoint(const double[:, ::1] gx_bar, const double[:, ::1] gy_bar):
    cdef Py_ssize_t h = gx_bar.shape[0], w = gx_bar.shape[1]
    cdef Py_ssize_t hp = h + 2, wp = w + 2
    cdef Py_ssize_t x, y
    gxp_arr = np.zeros((h + 4, w + 4), dtype=np.float64)
    gyp_arr = np.zeros((h + 4, w + 4), dtype=np.float64)
    cdef double[:, ::1] gxp = gxp_arr, gyp = gyp_arr
    zx_arr = np.empty((hp, wp), dtype=np.float64)
    zy_arr = np.empty((hp, wp), dtype=np.float64)
    cdef double[:, ::1] zx = zx_arr, zy = zy_arr
    fx_arr = np.empty((h, w), dtype=np.float64)
    fy_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] foldx = fx_arr, foldy = fy_arr
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for y in range(h):
            for x in range(w):
                gxp[y + 2, x + 2] = gx_bar[y, x]
                gyp[y + 2, x + 2] = gy_bar[y, x]
        for y in range(hp):
            for x in range(wp):
                zx[y, x] = ((gxp[y, x] + 2.0 * gxp[y + 1, x] + gxp[y + 2, x])
                            - (gxp[y, x + 2] + 2.0 * gxp[y + 1, x + 2] + gxp[y + 2, x + 2])) * 0.125
                zy[y, x] = ((gyp[y, x] + 2.0 * gyp[y, x + 1] + gyp[y, x + 2])
                            - (gyp[y + 2, x] + 2.0 * gyp[y + 2, x + 1] + gyp[y + 2, x + 2])) * 0.125
        _fold_pad_into(zx, foldx)
        _fold_pad_into(zy, foldy)
        for y in range(h):
            for x in range(w):
                out[y, x] = foldx[y, x] + foldy[y, x]
    return out_arr


def sample_gradient_bilinear(const double[:, ::1] gx_img, const double[:, ::1] gy_img,
                             const double[:, ::1] sx, const double[:, ::1] sy):
    cdef Py_ssize_t h = gx_img.shape[0], w = gx_img.shape[1]
    cdef Py_ssize_t oh = sx.shape[0], ow = sx.shape[1]
    cdef Py_ssize_t x, y, x0, x1, y0, y1
    cdef double xa, ya, sgx, sgy, fx, fy
    cdef double v00, v01, v10, v11, top, bot, rd0, rd1, cd0, cd1
    gxs_arr = np.empty((oh, ow), dtype=np.float64)
    gys_arr = np.empty((oh, ow), dtype=np.float64)
    gxdx_arr = np.empty((oh, ow), dtype=np.float64)
    gxdy_arr = np.empty((oh, ow), dtype=np.float64)
    gydx_arr = np.empty((oh, ow), dtype=np.float64)
    gydy_arr = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] gxs = gxs_arr, gys = gys_arr
    cdef double[:, ::1] gxdx = gxdx_arr, gxdy = gxdy_arr
    cdef double[:, ::1] gydx = gydx_arr, gydy = gydy_arr
    with nogil:
        for y in range(oh):
            for x in range(ow):
                xa = _fold(sx[y, x], w, &sgx)
                ya = _fold(sy[y, x], h, &sgy)
                x0 = <Py_ssize_t>floor(xa)
                if x0 < 0:
                    x0 = 0
                if x0 > w - 1:
                    x0 = w - 1
                fx = xa - x0
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                y0 = <Py_ssize_t>floor(ya)
                if y0 < 0:
                    y0 = 0
                if y0 > h - 1:
                    y0 = h - 1
                fy = ya - y0
                y1 = y0 + 1 if y0 + 1 < h else h - 1

                v00 = gx_img[y0, x0]
                v01 = gx_img[y0, x1]
                v10 = gx_img[y1, x0]
                v11 = gx_img[y1, x1]
                top = v00 + fx * (v01 - v00)
                bot = v10 + fx * (v11 - v10)
                gxs[y, x] = top + fy * (bot - top)
                rd0 = v01 - v00
                rd1 = v11 - v10
                gxdx[y, x] = (rd0 + fy * (rd1 - rd0)) * sgx
                cd0 = v10 - v00
                cd1 = v11 - v01
                gxdy[y, x] = (cd0 + fx * (cd1 - cd0)) * sgy

                v00 = gy_img[y0, x0]
                v01 = gy_img[y0, x1]
                v10 = gy_img[y1, x0]
                v11 = gy_img[y1, x1]
                top = v00 + fx * (v01 - v00)
                bot = v10 + fx * (v11 - v10)
                gys[y, x] = top + fy * (bot - top)
                rd0 = v01 - v00
                rd1 = v11 - v10
                gydx[y, x] = (rd0 + fy * (rd1 - rd0)) * sgx
                cd0 = v10 - v00
                cd1 = v11 - v01
                gydy[y, x] = (cd0 + fx * (cd1 - cd0)) * sgy
    return gxs_arr, gys_arr, gxdx_arr, gxdy_arr, gydx_arr, gydy_arr
