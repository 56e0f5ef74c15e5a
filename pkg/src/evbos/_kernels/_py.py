"""NumPy implementations of the estimator's hot inner-loop kernels.

These are the reference semantics; the compiled backend in ``_native.pyx``
must reproduce them bit-for-bit (same operation order, no FMA contraction).
Reductions are deliberately left to the caller so both backends share them.
"""

from __future__ import annotations

import numpy as np


def fold_reflect(s: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Fold continuous coordinates into [0, n-1] by mirror reflection.

    Returns the folded coordinate and the local derivative sign (+1 on the
    forward branch, -1 on the reflected branch).  Matches np.pad's 'reflect'
    (whole-sample symmetry, period 2(n-1)).
    """
    s = np.asarray(s, dtype=np.float64)
    if n == 1:
        return np.zeros_like(s), np.zeros_like(s)
    period = 2.0 * (n - 1)
    r = np.fmod(s, period)
    r = np.where(r < 0.0, r + period, r)
    mirrored = r > (n - 1)
    folded = np.where(mirrored, period - r, r)
    sign = np.where(mirrored, -1.0, 1.0)
    return folded, sign


def _corner_indices(coord: np.ndarray, n: int):
    i0 = np.floor(coord).astype(np.intp)
    np.clip(i0, 0, n - 1, out=i0)
    frac = coord - i0
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, frac


def bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``img`` at continuous positions with reflect padding."""
    h, w = img.shape
    xa, _ = fold_reflect(sx, w)
    ya, _ = fold_reflect(sy, h)
    x0, x1, fx = _corner_indices(xa, w)
    y0, y1, fy = _corner_indices(ya, h)
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def upsample_bilinear(grid: np.ndarray, patch: int, height: int, width: int) -> np.ndarray:
    """Interpolate a patch-grid to pixel density.

    Grid node (i, j) sits at the center of patch (i, j), i.e. at pixel
    position ((j + 0.5) * patch - 0.5, (i + 0.5) * patch - 0.5); values are
    clamped (constant) beyond the outermost nodes.
    """
    gh, gw = grid.shape
    xs = (np.arange(width, dtype=np.float64) + 0.5) / patch - 0.5
    ys = (np.arange(height, dtype=np.float64) + 0.5) / patch - 0.5
    np.clip(xs, 0.0, gw - 1, out=xs)
    np.clip(ys, 0.0, gh - 1, out=ys)
    x0, x1, fx = _corner_indices(xs, gw)
    y0, y1, fy = _corner_indices(ys, gh)
    g00 = grid[y0[:, None], x0[None, :]]
    g01 = grid[y0[:, None], x1[None, :]]
    g10 = grid[y1[:, None], x0[None, :]]
    g11 = grid[y1[:, None], x1[None, :]]
    fxr = fx[None, :]
    top = g00 + fxr * (g01 - g00)
    bot = g10 + fxr * (g11 - g10)
    return top + fy[:, None] * (bot - top)


def upsample_bilinear_adjoint(gbar: np.ndarray, patch: int, gh: int, gw: int) -> np.ndarray:
    """Transpose of :func:`upsample_bilinear`: scatter pixel gradients to nodes."""
    height, width = gbar.shape
    xs = (np.arange(width, dtype=np.float64) + 0.5) / patch - 0.5
    ys = (np.arange(height, dtype=np.float64) + 0.5) / patch - 0.5
    np.clip(xs, 0.0, gw - 1, out=xs)
    np.clip(ys, 0.0, gh - 1, out=ys)
    x0, x1, fx = _corner_indices(xs, gw)
    y0, y1, fy = _corner_indices(ys, gh)
    wy0 = (1.0 - fy)[:, None]
    wy1 = fy[:, None]
    wx0 = (1.0 - fx)[None, :]
    wx1 = fx[None, :]
    i00 = (y0[:, None] * gw + x0[None, :]).ravel()
    i01 = (y0[:, None] * gw + x1[None, :]).ravel()
    i10 = (y1[:, None] * gw + x0[None, :]).ravel()
    i11 = (y1[:, None] * gw + x1[None, :]).ravel()
    n = gh * gw
    b00 = np.bincount(i00, weights=(gbar * (wy0 * wx0)).ravel(), minlength=n)
    b01 = np.bincount(i01, weights=(gbar * (wy0 * wx1)).ravel(), minlength=n)
    b10 = np.bincount(i10, weights=(gbar * (wy1 * wx0)).ravel(), minlength=n)
    b11 = np.bincount(i11, weights=(gbar * (wy1 * wx1)).ravel(), minlength=n)
    return (b00 + b01 + b10 + b11).reshape(gh, gw)


def sobel_xy(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized 3x3 Sobel gradient (divided by 8) with reflect padding.

    A unit-slope ramp yields a unit gradient at interior pixels.
    """
    h, w = q.shape
    qp = np.pad(q, 1, mode="reflect")
    # columns x-1 / x+1 of the padded array, rows y-1 / y / y+1
    xp_a = qp[0 : h, 2 : w + 2]
    xp_b = qp[1 : h + 1, 2 : w + 2]
    xp_c = qp[2 : h + 2, 2 : w + 2]
    xm_a = qp[0 : h, 0 : w]
    xm_b = qp[1 : h + 1, 0 : w]
    xm_c = qp[2 : h + 2, 0 : w]
    gx = ((xp_a + 2.0 * xp_b + xp_c) - (xm_a + 2.0 * xm_b + xm_c)) * 0.125
    yp_a = qp[2 : h + 2, 0 : w]
    yp_b = qp[2 : h + 2, 1 : w + 1]
    yp_c = qp[2 : h + 2, 2 : w + 2]
    ym_a = qp[0 : h, 0 : w]
    ym_b = qp[0 : h, 1 : w + 1]
    ym_c = qp[0 : h, 2 : w + 2]
    gy = ((yp_a + 2.0 * yp_b + yp_c) - (ym_a + 2.0 * ym_b + ym_c)) * 0.125
    return gx, gy


def _reflect_fold_pad(qpbar: np.ndarray) -> np.ndarray:
    """Transpose of np.pad(..., 1, mode='reflect'): fold pad rows/cols inward."""
    h2, w2 = qpbar.shape
    h, w = h2 - 2, w2 - 2
    out = qpbar[1:-1, 1:-1].copy()
    if h > 1:
        out[1, :] += qpbar[0, 1:-1]
        out[h - 2, :] += qpbar[h2 - 1, 1:-1]
    else:
        out[0, :] += qpbar[0, 1:-1]
        out[0, :] += qpbar[h2 - 1, 1:-1]
    if w > 1:
        out[:, 1] += qpbar[1:-1, 0]
        out[:, w - 2] += qpbar[1:-1, w2 - 1]
    else:
        out[:, 0] += qpbar[1:-1, 0]
        out[:, 0] += qpbar[1:-1, w2 - 1]
    yi0, yi1 = (1, h - 2) if h > 1 else (0, 0)
    xi0, xi1 = (1, w - 2) if w > 1 else (0, 0)
    out[yi0, xi0] += qpbar[0, 0]
    out[yi0, xi1] += qpbar[0, w2 - 1]
    out[yi1, xi0] += qpbar[h2 - 1, 0]
    out[yi1, xi1] += qpbar[h2 - 1, w2 - 1]
    return out


def sobel_xy_adjoint(gx_bar: np.ndarray, gy_bar: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`sobel_xy` (pad-then-valid-correlate form)."""
    h, w = gx_bar.shape
    # transpose of valid correlation scatters each output back through the
    # kernel taps; equivalently: correlate the zero-padded cotangent with the
    # kernel flipped through the origin (the Sobel kernels flip to their
    # negatives).
    gxp = np.zeros((h + 4, w + 4))
    gxp[2:-2, 2:-2] = gx_bar
    gyp = np.zeros((h + 4, w + 4))
    gyp[2:-2, 2:-2] = gy_bar
    hp, wp = h + 2, w + 2
    a = gxp[0:hp, 2 : wp + 2]
    b = gxp[1 : hp + 1, 2 : wp + 2]
    c = gxp[2 : hp + 2, 2 : wp + 2]
    d = gxp[0:hp, 0:wp]
    e = gxp[1 : hp + 1, 0:wp]
    f = gxp[2 : hp + 2, 0:wp]
    zx = ((d + 2.0 * e + f) - (a + 2.0 * b + c)) * 0.125
    a = gyp[2 : hp + 2, 0:wp]
    b = gyp[2 : hp + 2, 1 : wp + 1]
    c = gyp[2 : hp + 2, 2 : wp + 2]
    d = gyp[0:hp, 0:wp]
    e = gyp[0:hp, 1 : wp + 1]
    f = gyp[0:hp, 2 : wp + 2]
    zy = ((d + 2.0 * e + f) - (a + 2.0 * b + c)) * 0.125
    return _reflect_fold_pad(zx) + _reflect_fold_pad(zy)


def sample_gradient_bilinear(
    gx_img: np.ndarray,
    gy_img: np.ndarray,
    sx: np.ndarray,
    sy: np.ndarray,
):
    """Sample two gradient images at warped positions, with position derivatives.

    Returns ``(gx, gy, gx_dx, gx_dy, gy_dx, gy_dy)`` where the ``d*`` outputs
    are derivatives of the sampled values w.r.t. the continuous sample
    position (reflect-branch sign included).
    """
    h, w = gx_img.shape
    xa, sgx = fold_reflect(sx, w)
    ya, sgy = fold_reflect(sy, h)
    x0, x1, fx = _corner_indices(xa, w)
    y0, y1, fy = _corner_indices(ya, h)

    def _sample(img):
        v00 = img[y0, x0]
        v01 = img[y0, x1]
        v10 = img[y1, x0]
        v11 = img[y1, x1]
        top = v00 + fx * (v01 - v00)
        bot = v10 + fx * (v11 - v10)
        val = top + fy * (bot - top)
        rd0 = v01 - v00
        rd1 = v11 - v10
        d_x = (rd0 + fy * (rd1 - rd0)) * sgx
        cd0 = v10 - v00
        cd1 = v11 - v01
        d_y = (cd0 + fx * (cd1 - cd0)) * sgy
        return val, d_x, d_y

    gxs, gx_dx, gx_dy = _sample(gx_img)
    gys, gy_dx, gy_dy = _sample(gy_img)
    return gxs, gys, gx_dx, gx_dy, gy_dx, gy_dy
