"""Hand-presence detection and the idle/busy capture state machine.

The user alternates between an idle stage (hands out of view) and a busy
stage (hands in view). A reference frame is captured while idle once fresh
guidance is on screen; a target frame is captured when the hands leave the
scene at the end of a busy stage. After the server's feedback is
acknowledged, the guidance refreshes and the cycle starts over.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidDistance, NotAwaiting
from .imaging import Frame


@dataclass(frozen=True)
class SkinModel:
    """HSV box classifier. Hue in degrees; a range with lo > hi wraps through 0."""

    hue_range: tuple[float, float] = (0.0, 50.0)
    sat_range: tuple[float, float] = (0.23, 0.68)
    val_range: tuple[float, float] = (0.35, 1.0)

    def __post_init__(self):
        for name, (lo, hi) in (("sat_range", self.sat_range), ("val_range", self.val_range)):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1, got {(lo, hi)}")
        lo, hi = self.hue_range
        if not (0.0 <= lo <= 360.0 and 0.0 <= hi <= 360.0):
            raise ValueError(f"hue_range must lie in [0, 360], got {self.hue_range}")

    def hue_intervals(self) -> list[tuple[float, float]]:
        lo, hi = self.hue_range
        if lo <= hi:
            return [(lo, hi)]
        return [(lo, 360.0), (0.0, hi)]


@dataclass(frozen=True)
class MotionConfig:
    base_threshold: float = 0.05
    capture_period_ms: float = 100.0
    reference_distance: float = 1.0
    min_threshold: float = 0.01
    max_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.base_threshold < 1.0:
            raise ValueError("base_threshold must be in (0, 1)")
        if not self.min_threshold <= self.base_threshold <= self.max_threshold:
            raise ValueError("need min_threshold <= base_threshold <= max_threshold")
        if self.capture_period_ms <= 0:
            raise ValueError("capture_period_ms must be positive")
        if self.reference_distance <= 0:
            raise ValueError("reference_distance must be positive")


class Stage(enum.Enum):
    IDLE = "idle"
    BUSY = "busy"


class MotionEvent(enum.Enum):
    NONE = "none"
    CAPTURE_REFERENCE = "capture_reference"
    CAPTURE_TARGET = "capture_target"


@dataclass(frozen=True)
class MotionState:
    stage: Stage = Stage.IDLE
    awaiting_feedback: bool = False
    # fresh guidance is on screen and no reference has been taken of it yet
    reference_pending: bool = True

    @property
    def armed(self) -> bool:
        """A reference is in hand and the next Busy->Idle transition yields a target."""
        return not self.awaiting_feedback and not self.reference_pending


def rgb_to_hsv(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""
    rgb = pixels.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, h * 60.0, 0.0)
    return h, s, v


def skin_mask(frame: Frame, model: SkinModel) -> np.ndarray:
    h, s, v = rgb_to_hsv(frame.pixels)
    in_hue = np.zeros(h.shape, dtype=bool)
    for lo, hi in model.hue_intervals():
        in_hue |= (h >= lo) & (h <= hi)
    return (
        in_hue
        & (s >= model.sat_range[0]) & (s <= model.sat_range[1])
        & (v >= model.val_range[0]) & (v <= model.val_range[1])
    )


def skin_proportion(frame: Frame, model: SkinModel) -> float:
    return float(np.count_nonzero(skin_mask(frame, model))) / (frame.width * frame.height)


def effective_threshold(config: MotionConfig, tag_distance: float) -> float:
    """Hand-detection threshold scaled by the inverse square of the tag distance, clamped."""
    if not tag_distance > 0:
        raise InvalidDistance(f"tag distance must be positive, got {tag_distance}")
    t = config.base_threshold * (config.reference_distance / tag_distance) ** 2
    return min(max(t, config.min_threshold), config.max_threshold)


def step_proportion(state: MotionState, proportion: float, threshold: float) -> tuple[MotionState, MotionEvent]:
    hand = proportion > threshold
    if state.stage is Stage.IDLE:
        if hand:
            return replace(state, stage=Stage.BUSY), MotionEvent.NONE
        if state.reference_pending and not state.awaiting_feedback:
            return replace(state, reference_pending=False), MotionEvent.CAPTURE_REFERENCE
        return state, MotionEvent.NONE
    if hand:
        return state, MotionEvent.NONE
    if state.armed:
        return MotionState(Stage.IDLE, awaiting_feedback=True, reference_pending=False), MotionEvent.CAPTURE_TARGET
    return replace(state, stage=Stage.IDLE), MotionEvent.NONE


def step(state: MotionState, frame: Frame, model: SkinModel, threshold: float) -> tuple[MotionState, MotionEvent]:
    """Advance the state machine by one capture period."""
    return step_proportion(state, skin_proportion(frame, model), threshold)


def acknowledge_feedback(state: MotionState) -> MotionState:
    """The server's verdict was shown and the guidance refreshed."""
    if not state.awaiting_feedback:
        raise NotAwaiting("no verification result is outstanding")
    return replace(state, awaiting_feedback=False, reference_pending=True)
