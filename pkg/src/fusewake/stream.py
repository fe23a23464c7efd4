"""Frame-cadence replay of a session: scores, alarms and per-frame latency."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .core import US_PER_S, Session, align_streams, window_session
from .evaluation import LatencyStats, latency_stats
from .model import AlarmTracker
from .pipeline import ModelBundle, featurize_window
from .vision import frame_ear


@dataclass(frozen=True)
class StreamLine:
    t_us: int
    s_vision: float | None
    s_physio: float | None
    s_fused: float | None
    alarm: bool

    def as_dict(self) -> dict:
        return {
            "t_us": self.t_us,
            "s_vision": self.s_vision,
            "s_physio": self.s_physio,
            "s_fused": self.s_fused,
            "alarm": self.alarm,
        }


class StreamReplay:
    """Replays an aligned session frame by frame.

    Each frame updates its EAR (the incremental vision cost); whenever a
    window closes on a stride boundary the window features are recomputed,
    scored by every path, fused and fed to the alarm tracker.
    ``feature_passes`` repeats the window feature extraction (used to probe
    how cost scales with feature work).
    """

    def __init__(self, bundle: ModelBundle, session: Session, feature_passes: int = 1):
        cfg = bundle.run_config
        self.bundle = bundle
        self.cfg = cfg
        self.session = align_streams(session, cfg.align_tolerance_ms)
        self.windows = window_session(self.session, cfg.window_s, cfg.stride_s)
        self.feature_passes = feature_passes
        self.tracker = AlarmTracker(cfg.alarm_alpha, cfg.alarm_threshold, cfg.alarm_consecutive)
        self._ends = np.array([w.end_us for w in self.windows], dtype=np.int64)

    def close_window(self, i: int) -> StreamLine:
        w = self.windows[i]
        for _ in range(self.feature_passes):
            rec = featurize_window(w, self.cfg)
        scores = self.bundle.score_record(rec)
        fused = scores["decision_fusion"]
        alarm = fused is not None and self.tracker.update(fused) is not None
        return StreamLine(w.end_us, scores["vision_only"], scores["physio_only"], fused, alarm)

    def frames(self, clock: Callable[[], float] | None = None) -> Iterator[tuple[int, float, StreamLine | None]]:
        """Yield (frame index, seconds spent on it, closed window line or None)."""
        clock = clock or time.perf_counter
        fr = self.session.frames
        next_win = 0
        n_win = len(self.windows)
        for k in range(len(fr)):
            t0 = clock()
            frame_ear(fr.left_eye[k : k + 1], fr.right_eye[k : k + 1])
            line = None
            # a window is complete once a frame at or past its end arrives
            if next_win < n_win and fr.t_us[k] >= self._ends[next_win]:
                line = self.close_window(next_win)
                next_win += 1
            yield k, clock() - t0, line
        while next_win < n_win:
            t0 = clock()
            line = self.close_window(next_win)
            next_win += 1
            yield len(fr) - 1, clock() - t0, line

    def run(self, pace: bool = False) -> Iterator[StreamLine]:
        """Window lines in order; with ``pace`` frames are released at the frame rate."""
        start = time.monotonic()
        fr = self.session.frames
        t_first = int(fr.t_us[0]) if len(fr) else 0
        for k, _, line in self.frames():
            if pace and k < len(fr):
                due = (int(fr.t_us[k]) - t_first) / US_PER_S
                delay = due - (time.monotonic() - start)
                if delay > 0:
                    time.sleep(delay)
            if line is not None:
                yield line


def latency_benchmark(
    bundle: ModelBundle, session: Session, warmup_frames: int = 100, feature_passes: int = 1
) -> LatencyStats:
    """Per-frame wall-clock cost of the streaming path.

    Window recomputation is amortised over the frames of its stride: each
    frame in a stride is charged the stride's total time divided by its frame
    count. Frames before the first complete window, and at least
    ``warmup_frames`` frames, are excluded.
    """
    if warmup_frames < 100:
        raise ValueError("warm-up must exclude at least 100 frames")
    if session.duration_s < bundle.run_config.window_s:
        raise ValueError(f"session too short for latency benchmark ({session.duration_s:.1f} s)")
    replay = StreamReplay(bundle, session, feature_passes)
    chunk: list[float] = []
    charged: list[float] = []
    first_window_frame = None
    for k, dt, line in replay.frames():
        chunk.append(dt)
        if line is not None:
            if first_window_frame is None:
                first_window_frame = k
            share = sum(chunk) / len(chunk)
            charged.extend([share] * len(chunk))
            chunk = []
    skip = max(warmup_frames, (first_window_frame or 0) + 1)
    per_frame_ms = np.asarray(charged[skip:]) * 1000.0
    if per_frame_ms.size == 0:
        raise ValueError("session too short: no frames left after warm-up")
    return latency_stats(per_frame_ms)
