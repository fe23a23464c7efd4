"""Session data model, JSONL session files, stream alignment and windowing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ALERT = "ALERT"
DROWSY = "DROWSY"
STATES = (ALERT, DROWSY)
CHANNELS = ("EEG", "EOG", "PULSE")

N_EYE = 6
N_MOUTH = 8
US_PER_S = 1_000_000


class SessionFormatError(ValueError):
    """Raised for malformed session files or sessions violating invariants."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AlignmentError(ValueError):
    pass


@dataclass
class Frames:
    """Columnar landmark frames.

    ``left_eye``/``right_eye`` are ``(n, 6, 2)`` in the p1..p6 order used by
    :func:`fusewake.vision.ear`; ``mouth`` is ``(n, 8, 2)``.
    """

    t_us: np.ndarray
    left_eye: np.ndarray
    right_eye: np.ndarray
    mouth: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.t_us)

    def take(self, idx) -> "Frames":
        return Frames(
            t_us=self.t_us[idx],
            left_eye=self.left_eye[idx],
            right_eye=self.right_eye[idx],
            mouth=self.mouth[idx],
            valid=self.valid[idx],
        )

    @classmethod
    def empty(cls) -> "Frames":
        return cls(
            t_us=np.zeros(0, dtype=np.int64),
            left_eye=np.zeros((0, N_EYE, 2)),
            right_eye=np.zeros((0, N_EYE, 2)),
            mouth=np.zeros((0, N_MOUTH, 2)),
            valid=np.zeros(0, dtype=bool),
        )


@dataclass
class PhysioBlock:
    channel: str
    fs: float
    samples: np.ndarray
    t0_us: int

    @property
    def end_us(self) -> int:
        """Timestamp one sample period past the last sample (rounded up)."""
        return self.t0_us + _ceil_us(len(self.samples), self.fs)


@dataclass
class Session:
    id: str
    subject_id: str
    fps: float
    frames: Frames
    physio: dict[str, list[PhysioBlock]]
    labels: list[tuple[int, str]]
    sync_markers: list[dict[str, int]] = field(default_factory=list)
    channel_fs: dict[str, float] = field(default_factory=dict)

    @property
    def duration_us(self) -> int:
        """Span covered by every stream: min over streams of their end time."""
        ends = []
        if len(self.frames):
            ends.append(int(self.frames.t_us[-1]) + _ceil_us(1, self.fps))
        for blocks in self.physio.values():
            if blocks:
                ends.append(max(b.end_us for b in blocks))
        if not ends:
            return 0
        return min(ends)

    @property
    def duration_s(self) -> float:
        return self.duration_us / US_PER_S

    def channel_samples(self, channel: str) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate a channel's blocks; returns (timestamps_us, samples)."""
        blocks = self.physio.get(channel, [])
        if not blocks:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        ts = [b.t0_us + _sample_offsets_us(len(b.samples), b.fs) for b in blocks]
        return np.concatenate(ts), np.concatenate([b.samples for b in blocks])


@dataclass
class Window:
    start_us: int
    duration_s: float
    frames: Frames
    physio: dict[str, np.ndarray]
    fs: dict[str, float]
    label: str
    fps: float = 30.0
    session_id: str = ""
    subject_id: str = ""

    @property
    def end_us(self) -> int:
        return self.start_us + round(self.duration_s * US_PER_S)


def _ceil_us(n: int, fs: float) -> int:
    return math.ceil(Fraction(n) * US_PER_S / Fraction(fs))


def _sample_offsets_us(n: int, fs: float) -> np.ndarray:
    # exact floor(i * 1e6 / fs) so timestamps stay integral and monotone
    f = Fraction(fs).limit_denominator(10**6)
    return (np.arange(n, dtype=np.int64) * US_PER_S * f.denominator) // f.numerator


# -- validation -------------------------------------------------------------


def validate_session(session: Session) -> Session:
    if session.fps <= 0:
        raise SessionFormatError("fps must be positive")
    fr = session.frames
    if len(fr) == 0:
        raise SessionFormatError("empty frame stream")
    if fr.left_eye.shape[1:] != (N_EYE, 2) or fr.right_eye.shape[1:] != (N_EYE, 2):
        raise SessionFormatError("landmark count: eyes need 6 points")
    if fr.mouth.shape[1:] != (N_MOUTH, 2):
        raise SessionFormatError("landmark count: mouth needs 8 points")
    if np.any(fr.t_us < 0) or np.any(np.diff(fr.t_us) < 0):
        raise SessionFormatError("frame timestamps must be non-negative and non-decreasing")
    for arr in (fr.left_eye, fr.right_eye, fr.mouth):
        if not np.all(np.isfinite(arr[fr.valid])):
            raise SessionFormatError("non-finite landmark coordinates")
    if not session.physio or not any(session.physio.values()):
        raise SessionFormatError("empty physio stream")
    for ch, blocks in session.physio.items():
        if not blocks:
            raise SessionFormatError(f"empty physio stream {ch}")
        prev_end = -1
        for b in blocks:
            if b.fs <= 0:
                raise SessionFormatError(f"{ch}: fs must be positive")
            if not np.all(np.isfinite(b.samples)):
                raise SessionFormatError(f"{ch}: non-finite samples")
            if b.t0_us < 0 or b.t0_us < prev_end:
                raise SessionFormatError(f"{ch}: blocks overlap or timestamps decrease")
            prev_end = b.end_us
    if not session.labels:
        raise SessionFormatError("empty label stream")
    lt = [t for t, _ in session.labels]
    if any(b < a for a, b in zip(lt, lt[1:])):
        raise SessionFormatError("label timestamps must be non-decreasing")
    dur = session.duration_us
    for t, s in session.labels:
        if s not in STATES:
            raise SessionFormatError(f"unknown state {s!r}")
        if not 0 <= t < dur:
            raise SessionFormatError(f"label at {t} us outside session duration")
    return session


# -- JSONL I/O --------------------------------------------------------------


def _num(x: float) -> float | int:
    x = float(x)
    return int(x) if x.is_integer() else x


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def session_lines(session: Session) -> Iterable[str]:
    channels = session.channel_fs or {
        ch: blocks[0].fs for ch, blocks in session.physio.items() if blocks
    }
    yield _dumps(
        {
            "type": "header",
            "id": session.id,
            "subject_id": session.subject_id,
            "fps": _num(session.fps),
            "channels": [{"name": ch, "fs": _num(fs)} for ch, fs in channels.items()],
            "sync_markers": [dict(m) for m in session.sync_markers],
        }
    )
    fr = session.frames
    left, right, mouth = fr.left_eye.tolist(), fr.right_eye.tolist(), fr.mouth.tolist()
    for i, t in enumerate(fr.t_us.tolist()):
        yield _dumps(
            {
                "type": "frame",
                "t_us": t,
                "left_eye": left[i],
                "right_eye": right[i],
                "mouth": mouth[i],
                "valid": bool(fr.valid[i]),
            }
        )
    for ch, blocks in session.physio.items():
        for b in blocks:
            yield _dumps(
                {
                    "type": "physio",
                    "channel": ch,
                    "t0_us": int(b.t0_us),
                    "samples": np.asarray(b.samples, dtype=float).tolist(),
                }
            )
    for t, s in session.labels:
        yield _dumps({"type": "label", "t_us": int(t), "state": s})


def write_session(session: Session, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in session_lines(session):
            fh.write(line)
            fh.write("\n")


def _points(rec: dict, key: str, n: int, lineno: int) -> list:
    pts = rec.get(key)
    if not isinstance(pts, list) or len(pts) != n:
        got = len(pts) if isinstance(pts, list) else "none"
        raise SessionFormatError(f"landmark count: {key} needs {n} points, got {got}", lineno)
    for p in pts:
        if not isinstance(p, list) or len(p) != 2:
            raise SessionFormatError(f"{key}: points must be [x, y] pairs", lineno)
    return pts


def load_session(path: str | Path) -> Session:
    """Read and validate a JSONL session file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"session file not found: {path}")

    header = None
    t_us, left, right, mouth, valid = [], [], [], [], []
    physio: dict[str, list[PhysioBlock]] = {}
    labels: list[tuple[int, str]] = []
    channel_fs: dict[str, float] = {}

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SessionFormatError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or "type" not in rec:
                raise SessionFormatError("record without type", lineno)
            kind = rec["type"]
            try:
                if lineno == 1 or header is None:
                    if kind != "header":
                        raise SessionFormatError("first record must be the header", lineno)
                    header = rec
                    for ch in rec["channels"]:
                        channel_fs[str(ch["name"])] = float(ch["fs"])
                        physio.setdefault(str(ch["name"]), [])
                elif kind == "frame":
                    t_us.append(int(rec["t_us"]))
                    left.append(_points(rec, "left_eye", N_EYE, lineno))
                    right.append(_points(rec, "right_eye", N_EYE, lineno))
                    mouth.append(_points(rec, "mouth", N_MOUTH, lineno))
                    valid.append(bool(rec["valid"]))
                elif kind == "physio":
                    ch = str(rec["channel"])
                    if ch not in channel_fs:
                        raise SessionFormatError(f"undeclared channel {ch!r}", lineno)
                    physio[ch].append(
                        PhysioBlock(ch, channel_fs[ch], np.asarray(rec["samples"], dtype=float), int(rec["t0_us"]))
                    )
                elif kind == "label":
                    labels.append((int(rec["t_us"]), str(rec["state"])))
                else:
                    raise SessionFormatError(f"unknown record type {kind!r}", lineno)
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, SessionFormatError):
                    raise
                raise SessionFormatError(f"malformed {kind} record ({exc!r})", lineno) from None

    if header is None:
        raise SessionFormatError("empty session file")
    frames = Frames(
        t_us=np.asarray(t_us, dtype=np.int64),
        left_eye=np.asarray(left, dtype=float).reshape(-1, N_EYE, 2),
        right_eye=np.asarray(right, dtype=float).reshape(-1, N_EYE, 2),
        mouth=np.asarray(mouth, dtype=float).reshape(-1, N_MOUTH, 2),
        valid=np.asarray(valid, dtype=bool),
    )
    session = Session(
        id=str(header["id"]),
        subject_id=str(header["subject_id"]),
        fps=float(header["fps"]),
        frames=frames,
        physio=physio,
        labels=labels,
        sync_markers=[{k: int(v) for k, v in m.items()} for m in header.get("sync_markers", [])],
        channel_fs=channel_fs,
    )
    return validate_session(session)


# -- alignment --------------------------------------------------------------


def estimate_clock_offset(session: Session) -> int:
    """Median of (video - physio) timestamp deltas over the sync markers, in us."""
    if not session.sync_markers:
        return 0
    deltas = np.array([m["video_us"] - m["physio_us"] for m in session.sync_markers], dtype=np.int64)
    return int(round(float(np.median(deltas))))


def frame_times_us(k, fps: float) -> np.ndarray:
    """Nominal timestamp of frame ``k``: round(k * 1e6 / fps) in integer arithmetic."""
    f = Fraction(fps).limit_denominator(10**6)
    k = np.asarray(k, dtype=np.int64)
    return (k * US_PER_S * f.denominator + f.numerator // 2) // f.numerator


def frame_slots_us(session: Session) -> np.ndarray:
    """Nominal frame instants on the physio clock across physio coverage."""
    start = min(b.t0_us for blocks in session.physio.values() for b in blocks)
    end = max(b.end_us for blocks in session.physio.values() for b in blocks)
    f = Fraction(session.fps).limit_denominator(10**6)
    k0 = -((-start * f.numerator) // (US_PER_S * f.denominator))
    k1 = (end * f.numerator) // (US_PER_S * f.denominator)
    return frame_times_us(np.arange(k0, k1 + 1), session.fps)


def align_streams(session: Session, tolerance_ms: float = 10.0) -> Session:
    """Correct the video clock offset and drop frames that cannot be paired.

    The physio clock is the reference. The video offset is the median of the
    sync-marker deltas; frames are shifted by it. Each corrected frame is
    then paired with its nearest nominal frame slot on the reference clock
    inside physio coverage; frames further than ``tolerance_ms`` from every
    slot are dropped.
    """
    if tolerance_ms <= 0:
        raise ValueError("tolerance_ms must be positive")
    if len(session.frames) == 0:
        raise AlignmentError("empty frame stream")
    if not session.physio or not all(session.physio.values()):
        raise AlignmentError("empty physio stream")

    tol_us = tolerance_ms * 1000.0
    offset = estimate_clock_offset(session)
    if abs(offset) > 10 * tol_us:
        raise AlignmentError(
            f"estimated clock drift {offset / 1000:.1f} ms exceeds 10x tolerance; capture looks corrupt"
        )

    t = session.frames.t_us - offset
    slots = frame_slots_us(session)
    if len(slots) == 0:
        raise AlignmentError("no physio coverage")
    pos = np.clip(np.searchsorted(slots, t), 1, len(slots) - 1) if len(slots) > 1 else np.zeros(len(t), dtype=int)
    if len(slots) > 1:
        gap = np.minimum(np.abs(t - slots[pos - 1]), np.abs(t - slots[pos]))
    else:
        gap = np.abs(t - slots[0])
    keep = (gap <= tol_us) & (t >= 0)
    if not keep.any():
        raise AlignmentError(f"no frame lies within {tolerance_ms} ms of a reference slot")

    frames = session.frames.take(keep)
    frames.t_us = t[keep]
    markers = [
        {**m, "video_us": int(m["video_us"]) - offset} for m in session.sync_markers
    ]
    if offset == 0 and keep.all():
        return session
    return replace(session, frames=frames, sync_markers=markers)


# -- windowing --------------------------------------------------------------


def window_count(duration_s: float, window_s: float, stride_s: float) -> int:
    return int(math.floor((duration_s - window_s) / stride_s + 1e-9)) + 1


def _label_spans(labels: Sequence[tuple[int, str]], end_us: int) -> list[tuple[int, int, str]]:
    spans = []
    for i, (t, s) in enumerate(labels):
        t_next = labels[i + 1][0] if i + 1 < len(labels) else end_us
        if t_next > t:
            spans.append((t, t_next, s))
    return spans


def majority_label(spans: Sequence[tuple[int, int, str]], start: int, end: int) -> str:
    """Majority state by overlap duration; ties go to DROWSY."""
    overlap = {ALERT: 0, DROWSY: 0}
    for a, b, s in spans:
        lo, hi = max(a, start), min(b, end)
        if hi > lo:
            overlap[s] += hi - lo
    return DROWSY if overlap[DROWSY] >= overlap[ALERT] else ALERT


def window_session(session: Session, window_s: float = 60.0, stride_s: float = 5.0) -> list[Window]:
    """Fixed-stride windows starting at 0; frames/samples in [start, start+window)."""
    dur_s = session.duration_s
    if not 0 < stride_s <= window_s:
        raise ValueError("need 0 < stride_s <= window_s")
    if window_s > dur_s + 1e-9:
        raise ValueError(f"window {window_s} s longer than session ({dur_s} s)")

    n = window_count(dur_s, window_s, stride_s)
    win_us = round(window_s * US_PER_S)
    stride_us = round(stride_s * US_PER_S)
    spans = _label_spans(session.labels, session.duration_us)
    channels = {ch: session.channel_samples(ch) for ch in session.physio}
    fs = {ch: blocks[0].fs for ch, blocks in session.physio.items() if blocks}

    windows = []
    for i in range(n):
        start = i * stride_us
        end = start + win_us
        lo, hi = np.searchsorted(session.frames.t_us, [start, end])
        phys = {}
        for ch, (ts, xs) in channels.items():
            a, b = np.searchsorted(ts, [start, end])
            phys[ch] = xs[a:b]
        windows.append(
            Window(
                start_us=start,
                duration_s=window_s,
                frames=session.frames.take(slice(lo, hi)),
                physio=phys,
                fs=fs,
                label=majority_label(spans, start, end),
                fps=session.fps,
                session_id=session.id,
                subject_id=session.subject_id,
            )
        )
    return windows
