"""Pure numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Arithmetic is kept in the same order as the compiled code so both backends
produce identical bytes.
"""

import numpy as np


def _source_coords(hinv, out_h, out_w):
    jj, ii = np.meshgrid(
        np.arange(out_h, dtype=np.float64), np.arange(out_w, dtype=np.float64), indexing="ij"
    )
    den = hinv[2, 0] * ii + hinv[2, 1] * jj + hinv[2, 2]
    finite = np.abs(den) > 1e-12
    safe = np.where(finite, den, 1.0)
    x = (hinv[0, 0] * ii + hinv[0, 1] * jj + hinv[0, 2]) / safe
    y = (hinv[1, 0] * ii + hinv[1, 1] * jj + hinv[1, 2]) / safe
    return x, y, finite


def _inside(x, y, finite, h, w):
    return finite & (x >= -0.5) & (x < w - 0.5) & (y >= -0.5) & (y < h - 0.5)


def warp_bilinear(src, hinv, out_h, out_w):
    h, w, nc = src.shape
    x, y, finite = _source_coords(np.asarray(hinv, dtype=np.float64), out_h, out_w)
    valid = _inside(x, y, finite, h, w)
    out = np.zeros((out_h, out_w, nc), dtype=np.uint8)
    x = x[valid]
    y = y[valid]
    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = (x - x0f)[:, None]
    fy = (y - y0f)[:, None]
    x0 = x0f.astype(np.intp)
    y0 = y0f.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    s = src.astype(np.float64)
    top = s[y0, x0] * (1.0 - fx) + s[y0, x1] * fx
    bot = s[y1, x0] * (1.0 - fx) + s[y1, x1] * fx
    v = np.floor(top * (1.0 - fy) + bot * fy + 0.5)
    out[valid] = np.minimum(v, 255.0).astype(np.uint8)
    return out


def warp_nearest(src, hinv, out_h, out_w):
    h, w = src.shape
    x, y, finite = _source_coords(np.asarray(hinv, dtype=np.float64), out_h, out_w)
    valid = _inside(x, y, finite, h, w)
    out = np.zeros((out_h, out_w), dtype=np.uint8)
    xi = np.minimum(np.floor(x[valid] + 0.5).astype(np.intp), w - 1)
    yi = np.minimum(np.floor(y[valid] + 0.5).astype(np.intp), h - 1)
    out[valid] = src[yi, xi]
    return out


def iou_counts(a, b):
    a = a.astype(bool)
    b = b.astype(bool)
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a | b))


def morph_cross(src, iterations, dilate):
    a = np.asarray(src, dtype=bool)
    for _ in range(iterations):
        p = np.pad(a, 1, constant_values=False)
        up, down = p[:-2, 1:-1], p[2:, 1:-1]
        left, right = p[1:-1, :-2], p[1:-1, 2:]
        if dilate:
            a = a | up | down | left | right
        else:
            a = a & up & down & left & right
    return a.astype(np.uint8)
