import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrverify import _pykernels, kernels

ck = pytest.importorskip("mrverify._ckernels", reason="compiled extension not built")


def hinv_for(rng, w, h):
    a = np.eye(3)
    a[:2, :2] += rng.normal(0, 0.3, (2, 2))
    a[:2, 2] = rng.normal(0, w / 4, 2)
    a[2, :2] = rng.normal(0, 2e-3, 2)
    return a


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
def test_warp_bilinear_backends_identical(seed, w, h):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    hinv = hinv_for(rng, w, h)
    ow, oh = int(rng.integers(1, 40)), int(rng.integers(1, 40))
    assert np.array_equal(np.asarray(ck.warp_bilinear(src, hinv, oh, ow)),
                          _pykernels.warp_bilinear(src, hinv, oh, ow))


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
def test_warp_nearest_backends_identical(seed, w, h):
    rng = np.random.default_rng(seed)
    src = (rng.random((h, w)) < 0.5).astype(np.uint8)
    hinv = hinv_for(rng, w, h)
    assert np.array_equal(np.asarray(ck.warp_nearest(src, hinv, h, w)), _pykernels.warp_nearest(src, hinv, h, w))


def test_resize_maps_identical_on_boundaries():
    # pixel-centre resize maps hit exact .5 sample positions; both backends must round alike
    from mrverify.imaging import resize_matrix

    rng = np.random.default_rng(5)
    src = rng.integers(0, 256, (64, 96, 3), dtype=np.uint8)
    for ow, oh in [(48, 32), (19, 7), (96, 64), (1, 1)]:
        m = resize_matrix(96, 64, ow, oh)
        assert np.array_equal(np.asarray(ck.warp_bilinear(src, m, oh, ow)), _pykernels.warp_bilinear(src, m, oh, ow))


@given(st.integers(0, 2**32 - 1), st.integers(1, 50), st.integers(1, 50))
def test_iou_counts_backends_identical(seed, w, h):
    rng = np.random.default_rng(seed)
    a = (rng.random((h, w)) < 0.4).astype(np.uint8)
    b = (rng.random((h, w)) < 0.4).astype(np.uint8)
    assert tuple(ck.iou_counts(a, b)) == _pykernels.iou_counts(a, b)


@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 30), st.integers(0, 4), st.booleans())
def test_morph_backends_identical(seed, w, h, it, dilate):
    rng = np.random.default_rng(seed)
    a = (rng.random((h, w)) < 0.5).astype(np.uint8)
    assert np.array_equal(np.asarray(ck.morph_cross(a, it, dilate)), _pykernels.morph_cross(a, it, dilate))


def test_dilate_two_by_two_gives_twelve():
    a = np.zeros((20, 20), np.uint8)
    a[9:11, 9:11] = 1
    out = kernels.morph_cross(a, 1, True)
    # brute force: every pixel within Manhattan distance 1 of the block
    expected = {(y + dy, x + dx) for y in (9, 10) for x in (9, 10)
                for dy, dx in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))}
    assert out.sum() == len(expected) == 12
    assert {tuple(p) for p in np.argwhere(out)} == expected


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("MRVERIFY_PURE_PYTHON", None)
    if env_value is not None:
        env["MRVERIFY_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "import mrverify; print(mrverify.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_backend_selected_at_import():
    assert _backend_in_subprocess(None) == "cython"
    assert _backend_in_subprocess("1") == "python"
    assert _backend_in_subprocess("0") == "cython"


def test_falls_back_when_extension_missing():
    code = ("import sys; sys.modules['mrverify._ckernels'] = None\n"
            "import mrverify, numpy as np\n"
            "from mrverify.imaging import Mask\nfrom mrverify import iou\n"
            "a = Mask(np.eye(4)); print(mrverify.BACKEND, iou(a, a))")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "1.0"]
