"""Planar homography estimation (normalized DLT) and perspective warping."""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateConfiguration, PointAtInfinity, SingularHomography
from .imaging import Frame, Mask

COLLINEAR_TOL = 1e-9
RANK_TOL = 1e-10
DET_TOL = 1e-12
DEN_TOL = 1e-12


class Point2(NamedTuple):
    x: float
    y: float


class Correspondence(NamedTuple):
    src: Point2
    dst: Point2


class Homography:
    """3x3 projective transform, scaled so ``m[2, 2] == 1`` whenever that entry is non-zero."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise SingularHomography("homography has non-finite entries")
        if m[2, 2] != 0.0:
            m = m / m[2, 2]
        m.setflags(write=False)
        self.m = m

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> Homography:
        return cls([[1, 0, dx], [0, 1, dy], [0, 0, 1]])

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> Homography:
        return cls(np.diag([sx, sx if sy is None else sy, 1.0]))

    def det(self) -> float:
        return float(np.linalg.det(self.m))

    def inverse(self) -> Homography:
        if abs(self.det()) <= DET_TOL:
            raise SingularHomography(f"determinant {self.det():.3g} is too close to zero")
        return Homography(np.linalg.inv(self.m))

    def __matmul__(self, other: Homography) -> Homography:
        return Homography(self.m @ other.m)

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"


def project(h: Homography, p) -> Point2:
    x, y = float(p[0]), float(p[1])
    m = h.m
    den = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(den) <= DEN_TOL:
        raise PointAtInfinity(f"({x}, {y}) maps to infinity")
    return Point2((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den)


def project_many(h: Homography, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ h.m.T
    if np.any(np.abs(hom[:, 2]) <= DEN_TOL):
        raise PointAtInfinity("a point maps to infinity")
    return hom[:, :2] / hom[:, 2:3]


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity that moves the centroid to the origin and the mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if not mean_dist > 0:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])


def _apply(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ t[:2, :2].T + t[:2, 2]


def _has_collinear_triple(pts: np.ndarray) -> bool:
    for a, b, c in itertools.combinations(range(len(pts)), 3):
        (x1, y1), (x2, y2) = pts[a] - pts[c], pts[b] - pts[c]
        if abs(x1 * y2 - x2 * y1) / 2.0 < COLLINEAR_TOL:
            return True
    return False


def _as_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    for pair in pairs:
        s, d = pair
        src.append((float(s[0]), float(s[1])))
        dst.append((float(d[0]), float(d[1])))
    src = np.array(src, dtype=np.float64).reshape(-1, 2)
    dst = np.array(dst, dtype=np.float64).reshape(-1, 2)
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise DegenerateConfiguration("correspondences must be finite")
    return src, dst


def estimate_homography(pairs: Sequence[Correspondence]) -> Homography:
    """Least-squares homography mapping each ``src`` onto its ``dst``.

    Both point sets are Hartley-normalized before building the 2n x 9 DLT
    system; the solution is the right singular vector of the smallest singular
    value, de-normalized afterwards. With exactly four pairs, any collinear
    triple is rejected; in general the system must have rank 8.
    """
    src, dst = _as_arrays(pairs)
    n = len(src)
    if n < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {n}")
    ts, td = _normalizer(src), _normalizer(dst)
    ns, nd = _apply(ts, src), _apply(td, dst)
    if n == 4 and (_has_collinear_triple(ns) or _has_collinear_triple(nd)):
        raise DegenerateConfiguration("three of the four points are collinear")

    a = np.zeros((2 * n, 9))
    x, y = ns[:, 0], ns[:, 1]
    u, v = nd[:, 0], nd[:, 1]
    a[0::2, 0], a[0::2, 1], a[0::2, 2] = x, y, 1.0
    a[0::2, 6], a[0::2, 7], a[0::2, 8] = -u * x, -u * y, -u
    a[1::2, 3], a[1::2, 4], a[1::2, 5] = x, y, 1.0
    a[1::2, 6], a[1::2, 7], a[1::2, 8] = -v * x, -v * y, -v

    _, s, vt = np.linalg.svd(a)
    if s[7] <= RANK_TOL * s[0]:
        raise DegenerateConfiguration("correspondence system is rank-deficient")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) > 0:
        m = m / m[2, 2]
    if abs(np.linalg.det(m)) <= DET_TOL:
        raise DegenerateConfiguration("estimated homography is singular")
    return Homography(m)


def reprojection_errors(h: Homography, pairs) -> np.ndarray:
    src, dst = _as_arrays(pairs)
    return np.sqrt(((project_many(h, src) - dst) ** 2).sum(axis=1))


def warp_frame(frame: Frame, h: Homography, out_size: tuple[int, int]) -> Frame:
    """Inverse-mapping warp: output pixel p samples the input at H^-1 p (bilinear, black outside)."""
    w, ht = out_size
    return Frame(kernels.warp_bilinear(frame.pixels, h.inverse().m, ht, w))


def warp_mask(mask: Mask, h: Homography, out_size: tuple[int, int]) -> Mask:
    w, ht = out_size
    return Mask(kernels.warp_nearest(mask.bits, h.inverse().m, ht, w))


def align_target(ref_points, tgt_points, target: Frame, out_size: tuple[int, int]) -> Frame:
    """Warp ``target`` into the reference view using index-paired tag-plane points."""
    if len(ref_points) != len(tgt_points):
        raise DegenerateConfiguration(
            f"point sets differ in length: {len(ref_points)} vs {len(tgt_points)}"
        )
    h = estimate_homography(list(zip(tgt_points, ref_points)))
    same = np.array_equal(np.asarray(ref_points, dtype=np.float64), np.asarray(tgt_points, dtype=np.float64))
    if same and tuple(out_size) == target.size:
        return target
    return warp_frame(target, h, out_size)


def alignment_homography(ref_points, tgt_points) -> Homography:
    if len(ref_points) != len(tgt_points):
        raise DegenerateConfiguration("point sets differ in length")
    return estimate_homography(list(zip(tgt_points, ref_points)))


def sample_plane_points(region_w: float, region_h: float, count: int = 8, margin: float = 0.1) -> list[Point2]:
    """Spread ``count`` points over a rectangle on the tag plane.

    Corners come first, then edge midpoints, then an interior grid; this
    mimics picking unit corners on the baseplate.
    """
    x0, x1 = margin * region_w, (1 - margin) * region_w
    y0, y1 = margin * region_h, (1 - margin) * region_h
    xm, ym = (x0 + x1) / 2, (y0 + y1) / 2
    pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (xm, y0), (x1, ym), (xm, y1), (x0, ym)]
    k = 3
    while len(pts) < count:
        for fx in np.linspace(0.2, 0.8, k):
            for fy in np.linspace(0.25, 0.75, k):
                pts.append((x0 + fx * (x1 - x0), y0 + fy * (y1 - y0)))
        k += 1
    return [Point2(float(x), float(y)) for x, y in pts[:count]]
