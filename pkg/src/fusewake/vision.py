"""Eye/mouth geometry features: EAR, blinks, PERCLOS, yawns."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import Window

VISION_FEATURES = ("mean_ear", "min_ear", "blink_rate_per_min", "mean_blink_ms", "perclos", "yawn_count")


class DegenerateGeometryError(ValueError):
    pass


class MissingModalityError(ValueError):
    """A window carries no usable data for a modality."""


@dataclass(frozen=True)
class BlinkEvent:
    onset_frame: int
    duration_frames: int
    duration_ms: float


@dataclass(frozen=True)
class VisionConfig:
    ear_threshold: float = 0.2
    blink_min_frames: int = 2
    mar_threshold: float = 0.6
    yawn_min_s: float = 1.5


@dataclass
class VisionFeatures:
    mean_ear: float
    min_ear: float
    blink_rate_per_min: float
    mean_blink_ms: float
    perclos: float
    yawn_count: int
    quality: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in VISION_FEATURES], dtype=float)

    def as_dict(self) -> dict:
        return asdict(self)


def _dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def ear(eye) -> float | np.ndarray:
    """Eye aspect ratio of 6 landmarks (p1..p6); vectorised over leading axes.

    p1/p4 are the horizontal corners, p2,p3 the upper lid and p6,p5 the
    lower lid.
    """
    p = np.asarray(eye, dtype=float)
    width = _dist(p[..., 0, :], p[..., 3, :])
    if np.any(width == 0):
        raise DegenerateGeometryError("degenerate eye: p1 == p4")
    out = (_dist(p[..., 1, :], p[..., 5, :]) + _dist(p[..., 2, :], p[..., 4, :])) / (2.0 * width)
    return float(out) if out.ndim == 0 else out


def mar(mouth) -> float | np.ndarray:
    """Mouth aspect ratio over 8 points m1..m8 with m1/m5 as the corners."""
    m = np.asarray(mouth, dtype=float)
    width = _dist(m[..., 0, :], m[..., 4, :])
    if np.any(width == 0):
        raise DegenerateGeometryError("degenerate mouth: m1 == m5")
    vert = _dist(m[..., 1, :], m[..., 7, :]) + _dist(m[..., 2, :], m[..., 6, :]) + _dist(m[..., 3, :], m[..., 5, :])
    out = vert / (3.0 * width)
    return float(out) if out.ndim == 0 else out


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of maximal True runs."""
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def detect_blinks(ear_series, fps: float, threshold: float = 0.2, min_frames: int = 2) -> list[BlinkEvent]:
    x = np.asarray(ear_series, dtype=float)
    if x.size == 0:
        raise ValueError("empty EAR series")
    if fps <= 0 or min_frames < 1:
        raise ValueError("need fps > 0 and min_frames >= 1")
    return [
        BlinkEvent(s, n, n * 1000.0 / fps)
        for s, n in _runs(x < threshold)
        if n >= min_frames
    ]


def perclos(ear_series, threshold: float = 0.2) -> float:
    x = np.asarray(ear_series, dtype=float)
    if x.size == 0:
        raise ValueError("empty EAR series")
    return float(np.mean(x < threshold))


def detect_yawns(mouth_series, fps: float, mar_threshold: float = 0.6, min_s: float = 1.5) -> int:
    if fps <= 0:
        raise ValueError("fps must be positive")
    m = np.asarray(mouth_series, dtype=float)
    if m.size == 0:
        return 0
    ratios = mar(m.reshape(-1, 8, 2))
    min_frames = min_s * fps
    return sum(1 for _, n in _runs(np.atleast_1d(ratios) > mar_threshold) if n >= min_frames - 1e-9)


def frame_ear(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Per-frame EAR, averaging both eyes; an unmeasurable eye defers to the other."""
    def safe(eye):
        width = _dist(eye[:, 0, :], eye[:, 3, :])
        ok = np.isfinite(width) & (width > 0)
        out = np.full(len(eye), np.nan)
        if ok.any():
            out[ok] = ear(eye[ok])
        return out

    if len(left) == 0:
        return np.zeros(0)
    both = np.stack([safe(left), safe(right)])
    n_ok = np.sum(np.isfinite(both), axis=0)
    total = np.nansum(both, axis=0)
    return np.where(n_ok > 0, total / np.maximum(n_ok, 1), np.nan)


def vision_features(window: Window, cfg: VisionConfig | None = None) -> VisionFeatures:
    """Window-level vision features over the valid-frame subsequence.

    Raises :class:`MissingModalityError` when no frame is usable.
    """
    cfg = cfg or VisionConfig()
    fr = window.frames
    if len(fr) == 0:
        raise MissingModalityError("window has no frames")
    e = frame_ear(fr.left_eye, fr.right_eye)
    valid = fr.valid & np.isfinite(e)
    quality = float(valid.mean())
    if not valid.any():
        raise MissingModalityError("no valid frames (vision quality 0)")
    e = e[valid]
    fps = window.fps
    blinks = detect_blinks(e, fps, cfg.ear_threshold, cfg.blink_min_frames)
    minutes = len(e) / fps / 60.0
    mouth = fr.mouth[valid]
    mouth_ok = _dist(mouth[:, 0, :], mouth[:, 4, :]) > 0
    return VisionFeatures(
        mean_ear=float(np.mean(e)),
        min_ear=float(np.min(e)),
        blink_rate_per_min=len(blinks) / minutes,
        mean_blink_ms=float(np.mean([b.duration_ms for b in blinks])) if blinks else 0.0,
        perclos=perclos(e, cfg.ear_threshold),
        yawn_count=detect_yawns(mouth[mouth_ok], fps, cfg.mar_threshold, cfg.yawn_min_s),
        quality=quality,
    )
