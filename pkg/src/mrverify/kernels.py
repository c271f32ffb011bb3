"""Backend selection for the raster hot loops.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementation in ``_pykernels`` takes over. Set ``MRVERIFY_PURE_PYTHON=1``
to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("MRVERIFY_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def warp_bilinear(src: np.ndarray, hinv: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Inverse-map ``src`` (h, w, c) through ``hinv`` with bilinear sampling."""
    return _impl.warp_bilinear(
        np.ascontiguousarray(src, dtype=np.uint8),
        np.ascontiguousarray(hinv, dtype=np.float64),
        int(out_h),
        int(out_w),
    )


def warp_nearest(src: np.ndarray, hinv: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return _impl.warp_nearest(
        np.ascontiguousarray(src, dtype=np.uint8),
        np.ascontiguousarray(hinv, dtype=np.float64),
        int(out_h),
        int(out_w),
    )


def iou_counts(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    inter, union = _impl.iou_counts(
        np.ascontiguousarray(a, dtype=np.uint8), np.ascontiguousarray(b, dtype=np.uint8)
    )
    return int(inter), int(union)


def morph_cross(mask: np.ndarray, iterations: int, dilate: bool) -> np.ndarray:
    """Dilate or erode a binary raster with the 4-connected cross, ``iterations`` times."""
    return np.asarray(
        _impl.morph_cross(np.ascontiguousarray(mask, dtype=np.uint8), int(iterations), bool(dilate)),
        dtype=np.uint8,
    )
