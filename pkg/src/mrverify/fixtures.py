"""Synthetic annotated board images used as dataset sources.

Each image is a textured circuit-board background with rectangular
components; every component is one instance with an exact rectangular mask.
Class ids index a fixed palette of component looks. Classes are unique
within an image so a shifted overlay never lands on a twin instance.
"""

from __future__ import annotations

import numpy as np

from .dataset import AnnotatedImage
from .imaging import Frame, Mask
from .segmentation import InstanceLabel

PALETTE = [
    ((30, 30, 34), (150, 150, 150)),    # black IC, silver legend
    ((200, 170, 40), (110, 80, 40)),    # yellow capacitor
    ((200, 200, 195), (60, 60, 60)),    # white connector
    ((150, 40, 35), (220, 190, 170)),   # red relay
    ((40, 70, 150), (230, 230, 230)),   # blue trimmer
    ((205, 150, 50), (70, 50, 20)),     # gold crystal
    ((90, 90, 95), (200, 200, 210)),    # grey regulator
    ((20, 110, 60), (210, 220, 140)),   # green header
]


def _background(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.array([22.0, 92.0, 48.0]) * rng.uniform(0.8, 1.2)
    shade = 1.0 + 0.15 * np.sin(xx / rng.uniform(90, 200) + rng.uniform(0, 6)) \
        * np.cos(yy / rng.uniform(90, 200) + rng.uniform(0, 6))
    img = base[None, None, :] * shade[..., None]
    for _ in range(int(rng.integers(10, 22))):
        thick = int(rng.integers(2, 6))
        color = np.array([190, 170, 35]) * rng.uniform(0.7, 1.0)
        if rng.random() < 0.5:
            y = int(rng.integers(0, h - thick))
            x0, x1 = sorted(rng.integers(0, w, size=2))
            img[y:y + thick, x0:x1] = color
        else:
            x = int(rng.integers(0, w - thick))
            y0, y1 = sorted(rng.integers(0, h, size=2))
            img[y0:y1, x:x + thick] = color
    for _ in range(int(rng.integers(30, 60))):
        cx, cy = rng.integers(4, w - 4), rng.integers(4, h - 4)
        img[cy - 2:cy + 3, cx - 2:cx + 3] = (200, 190, 120)
    img += rng.normal(0.0, 6.0, size=img.shape)
    return img


def _paint_component(img: np.ndarray, rng, x, y, w, h, look) -> None:
    body, legend = (np.array(c, dtype=np.float64) for c in look)
    patch = np.empty((h, w, 3))
    patch[...] = body * rng.uniform(0.85, 1.15)
    ramp = np.linspace(1.15, 0.85, h)[:, None, None]
    patch *= ramp
    bevel = max(2, min(w, h) // 12)
    patch[:bevel] *= 1.25
    patch[-bevel:] *= 0.7
    for _ in range(int(rng.integers(1, 4))):
        lx = int(rng.integers(bevel, max(bevel + 1, w - 20)))
        ly = int(rng.integers(bevel, max(bevel + 1, h - 6)))
        patch[ly:ly + 3, lx:lx + int(rng.integers(6, 20))] = legend
    patch += rng.normal(0.0, 4.0, size=patch.shape)
    img[y:y + h, x:x + w] = patch


def make_board(rng: np.random.Generator, source_id: str, size: tuple[int, int] = (640, 640),
               class_count: int = len(PALETTE), min_instances: int = 3, max_instances: int = 6,
               side_range: tuple[int, int] | None = None) -> AnnotatedImage:
    """One board; component sides default to 10%..28% of the shorter image side."""
    w, h = size
    if side_range is None:
        short = min(w, h)
        side_range = (max(4, short // 10), max(5, short * 9 // 32))
    img = _background(rng, w, h)
    k = int(rng.integers(min_instances, max_instances + 1))
    classes = rng.permutation(class_count)[:k]
    boxes: list[tuple[int, int, int, int]] = []
    instances = []
    gap = 10
    for cls in classes:
        for _ in range(200):
            bw = int(rng.integers(side_range[0], min(side_range[1], w // 3) + 1))
            bh = int(rng.integers(side_range[0], min(side_range[1], h // 3) + 1))
            x = int(rng.integers(0, w - bw + 1))
            y = int(rng.integers(0, h - bh + 1))
            if all(x + bw + gap <= bx or bx + bbw + gap <= x or y + bh + gap <= by or by + bbh + gap <= y
                   for bx, by, bbw, bbh in boxes):
                break
        else:
            continue
        boxes.append((x, y, bw, bh))
        _paint_component(img, rng, x, y, bw, bh, PALETTE[int(cls) % len(PALETTE)])
        bits = np.zeros((h, w), dtype=np.uint8)
        bits[y:y + bh, x:x + bw] = 1
        instances.append(InstanceLabel(int(cls), Mask(bits)))
    frame = Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    return AnnotatedImage(frame, tuple(instances), source_id)


def make_boards(count: int, seed: int = 0, **kwargs) -> list[AnnotatedImage]:
    """``count`` deterministic boards; board ``k`` depends only on ``(seed, k)``."""
    return [make_board(np.random.default_rng([seed, k]), f"board_{k:04d}", **kwargs) for k in range(count)]
