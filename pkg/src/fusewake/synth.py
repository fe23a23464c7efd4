"""Seeded generator of labelled synthetic sessions.

Randomness comes from numpy's PCG64 bit generator. A session seeded with
``seed`` builds ``SeedSequence(seed)`` and spawns six child streams in this
fixed order: state path, vision, EEG, EOG, pulse, artefacts/clock. Subject
jitter for subject ``j`` of a dataset seeded with ``seed`` uses
``SeedSequence([seed, 0x5B1, j])``. Session ``i`` of a dataset uses seed
``seed + i``. Any PCG64/SeedSequence implementation reproduces the streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .core import ALERT, DROWSY, US_PER_S, Frames, PhysioBlock, Session, frame_times_us

EYE_WIDTH_PX = 30.0
MOUTH_WIDTH_PX = 50.0
LEFT_EYE_CENTER = (180.0, 200.0)
RIGHT_EYE_CENTER = (260.0, 200.0)
MOUTH_CENTER = (220.0, 300.0)
CLOSED_EAR = 0.05
GEN_BANDS = {"delta": (1.0, 4.0), "theta": (4.0, 8.0), "alpha": (8.0, 13.0), "beta": (13.0, 30.0)}
JITTERED = (
    "blink_rate_per_min",
    "ear_baseline",
    "rr_mean_ms",
    "rr_jitter_ms",
    "eog_level",
    "theta_gain",
    "alpha_gain",
    "beta_gain",
)


@dataclass(frozen=True)
class StateEmission:
    blink_rate_per_min: float
    blink_ms: tuple[float, float]
    microsleep_rate_per_min: float
    ear_baseline: float
    ear_noise: float
    yawn_rate_per_min: float
    delta_gain: float
    theta_gain: float
    alpha_gain: float
    beta_gain: float
    rr_mean_ms: float
    rr_jitter_ms: float
    eog_level: float


ALERT_EMISSION = StateEmission(
    blink_rate_per_min=15.0,
    blink_ms=(100.0, 150.0),
    microsleep_rate_per_min=0.0,
    ear_baseline=0.32,
    ear_noise=0.025,
    yawn_rate_per_min=0.05,
    delta_gain=1.0,
    theta_gain=1.0,
    alpha_gain=1.0,
    beta_gain=1.0,
    rr_mean_ms=850.0,
    rr_jitter_ms=30.0,
    eog_level=1.0,
)

DROWSY_EMISSION = StateEmission(
    blink_rate_per_min=8.0,
    blink_ms=(300.0, 500.0),
    microsleep_rate_per_min=0.5,
    ear_baseline=0.28,
    ear_noise=0.06,
    yawn_rate_per_min=1.0,
    delta_gain=1.0,
    theta_gain=2.0,
    alpha_gain=2.0,
    beta_gain=0.7,
    rr_mean_ms=1000.0,
    rr_jitter_ms=45.0,
    eog_level=0.6,
)


@dataclass(frozen=True)
class GenParams:
    p_alert_to_drowsy: float = 0.0025
    p_drowsy_to_alert: float = 0.0025
    alert: StateEmission = ALERT_EMISSION
    drowsy: StateEmission = DROWSY_EMISSION
    # while drowsy, each modality expresses the drowsy emission with an
    # intensity clip(mean + sd * z(t), 0, 1), z an AR(1) process with time
    # constant expression_tau_s, independent per modality
    vision_expression: tuple[float, float] = (0.4, 0.35)
    physio_expression: tuple[float, float] = (0.3, 0.3)
    expression_tau_s: float = 20.0
    microsleep_s: tuple[float, float] = (1.0, 5.0)
    yawn_s: tuple[float, float] = (3.0, 6.0)
    landmark_dropout_prob: float = 0.02
    clip_prob: float = 0.01
    eeg_amplitude: float = 10.0
    eeg_noise: float = 0.5
    eog_noise: float = 0.3
    pulse_noise: float = 0.02
    pulse_width_s: float = 0.03
    max_clock_offset_ms: float = 5.0
    sync_every_s: float = 30.0
    subject_jitter: float = 0.1
    fps: float = 30.0
    fs: float = 256.0

    def validate(self) -> "GenParams":
        for name in ("p_alert_to_drowsy", "p_drowsy_to_alert", "landmark_dropout_prob", "clip_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be a probability, got {v}")
        for em in (self.alert, self.drowsy):
            if em.blink_rate_per_min <= 0 or min(em.blink_ms) <= 0 or em.rr_mean_ms <= 0:
                raise ValueError("rates and durations must be positive")
            if em.microsleep_rate_per_min < 0 or em.yawn_rate_per_min < 0:
                raise ValueError("event rates must be non-negative")
        for mean, sd in (self.vision_expression, self.physio_expression):
            if not 0 <= mean <= 1 or sd < 0:
                raise ValueError("expression needs mean in [0, 1] and sd >= 0")
        if self.expression_tau_s <= 0:
            raise ValueError("expression_tau_s must be positive")
        if self.fps <= 0 or self.fs <= 0:
            raise ValueError("fps and fs must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator parameter(s): {sorted(unknown)}")
        kw = dict(d)
        for state in ("alert", "drowsy"):
            if state in kw:
                base = asdict(getattr(cls(), state))
                extra = set(kw[state]) - set(base)
                if extra:
                    raise ValueError(f"unknown {state} emission parameter(s): {sorted(extra)}")
                base.update(kw[state])
                base["blink_ms"] = tuple(base["blink_ms"])
                kw[state] = StateEmission(**base)
        for key in ("vision_expression", "physio_expression", "microsleep_s", "yawn_s"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw).validate()

    @classmethod
    def from_json(cls, path: str | Path) -> "GenParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class GroundTruth:
    """Generator internals kept for oracle checks (not serialised)."""

    states: np.ndarray
    beat_times_s: np.ndarray
    intended_ear: np.ndarray
    vision_intensity: np.ndarray
    physio_intensity: np.ndarray
    clock_offset_us: int
    blinks: list = field(default_factory=list)


def _mix(a: np.ndarray | float, b: np.ndarray | float, u: np.ndarray) -> np.ndarray:
    return a + u * (b - a)


def sample_states(rng: np.random.Generator, n_steps: int, p_ad: float, p_da: float) -> np.ndarray:
    """Two-state Markov chain over 1 s steps (1 = DROWSY), started from its stationary law."""
    pi_d = p_ad / (p_ad + p_da) if p_ad + p_da > 0 else 0.0
    u = rng.random(n_steps)
    states = np.empty(n_steps, dtype=np.int8)
    states[0] = u[0] < pi_d
    for t in range(1, n_steps):
        flip = p_ad if states[t - 1] == 0 else p_da
        states[t] = (1 - states[t - 1]) if u[t] < flip else states[t - 1]
    return states


def expression_intensity(
    rng: np.random.Generator, states: np.ndarray, mean_sd: tuple[float, float], tau_s: float
) -> np.ndarray:
    """Per-second drowsy expression in [0, 1]; zero while alert."""
    mean, sd = mean_sd
    rho = math.exp(-1.0 / tau_s)
    e = rng.standard_normal(len(states))
    z = np.empty(len(states))
    z[0] = e[0]
    for t in range(1, len(states)):
        z[t] = rho * z[t - 1] + math.sqrt(1 - rho * rho) * e[t]
    return np.where(states == 1, np.clip(mean + sd * z, 0.0, 1.0), 0.0)


def _poisson_events(rng: np.random.Generator, rate_per_s: np.ndarray) -> np.ndarray:
    """Event onsets (s) of an inhomogeneous Poisson process piecewise constant per second."""
    counts = rng.poisson(rate_per_s)
    onsets = [s + rng.random(c) for s, c in enumerate(counts) if c]
    return np.sort(np.concatenate(onsets)) if onsets else np.zeros(0)


def eye_points(center: tuple[float, float], ear_value: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Six eye landmarks whose EAR equals ``ear_value`` exactly (before rounding)."""
    n = len(ear_value)
    cx = center[0] + dx
    cy = center[1] + dy
    half_w = EYE_WIDTH_PX / 2
    half_h = ear_value * EYE_WIDTH_PX / 2
    pts = np.empty((n, 6, 2))
    pts[:, 0] = np.column_stack([cx - half_w, cy])
    pts[:, 3] = np.column_stack([cx + half_w, cy])
    pts[:, 1] = np.column_stack([cx - half_w / 3, cy - half_h])
    pts[:, 2] = np.column_stack([cx + half_w / 3, cy - half_h])
    pts[:, 4] = np.column_stack([cx + half_w / 3, cy + half_h])
    pts[:, 5] = np.column_stack([cx - half_w / 3, cy + half_h])
    return pts


def mouth_points(center: tuple[float, float], mar_value: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    n = len(mar_value)
    cx = center[0] + dx
    cy = center[1] + dy
    half_w = MOUTH_WIDTH_PX / 2
    half_h = mar_value * MOUTH_WIDTH_PX / 2
    pts = np.empty((n, 8, 2))
    pts[:, 0] = np.column_stack([cx - half_w, cy])
    pts[:, 4] = np.column_stack([cx + half_w, cy])
    for upper, lower, off in ((1, 7, -half_w / 2), (2, 6, 0.0), (3, 5, half_w / 2)):
        pts[:, upper] = np.column_stack([cx + off, cy - half_h])
        pts[:, lower] = np.column_stack([cx + off, cy + half_h])
    return pts


def _band_noise(rng: np.random.Generator, n: int, fs: float, lo: float, hi: float) -> np.ndarray:
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    x = sps.sosfiltfilt(sos, rng.standard_normal(n))
    return x / np.std(x)


def generate_session(
    seed: int,
    duration_s: float = 300.0,
    params: GenParams | None = None,
    session_id: str | None = None,
    subject_id: str = "subj00",
    return_truth: bool = False,
):
    """Generate one labelled session; ``return_truth`` also yields a :class:`GroundTruth`."""
    p = (params or GenParams()).validate()
    if duration_s < 120:
        raise ValueError("duration_s must be >= 120")
    n_steps = int(math.ceil(duration_s))
    rs_state, rs_vis, rs_eeg, rs_eog, rs_pulse, rs_art = [
        np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(6)
    ]

    states = sample_states(rs_state, n_steps, p.p_alert_to_drowsy, p.p_drowsy_to_alert)
    iv = expression_intensity(rs_state, states, p.vision_expression, p.expression_tau_s)
    ip = expression_intensity(rs_state, states, p.physio_expression, p.expression_tau_s)
    A, D = p.alert, p.drowsy

    # -- vision ------------------------------------------------------------
    fps = p.fps
    n_frames = int(round(n_steps * fps))
    k = np.arange(n_frames)
    sec = np.minimum((k / fps).astype(int), n_steps - 1)
    t_frame = k / fps
    ear_base = _mix(A.ear_baseline, D.ear_baseline, iv)[sec]
    ear_sd = _mix(A.ear_noise, D.ear_noise, iv)[sec]
    ear_val = ear_base + ear_sd * rs_vis.standard_normal(n_frames)

    blink_on = _poisson_events(rs_vis, _mix(A.blink_rate_per_min, D.blink_rate_per_min, iv) / 60.0)
    u_b = iv[np.minimum(blink_on.astype(int), n_steps - 1)]
    lo = _mix(A.blink_ms[0], D.blink_ms[0], u_b)
    hi = _mix(A.blink_ms[1], D.blink_ms[1], u_b)
    blink_dur = (lo + rs_vis.random(len(blink_on)) * (hi - lo)) / 1000.0
    ms_on = _poisson_events(rs_vis, _mix(A.microsleep_rate_per_min, D.microsleep_rate_per_min, iv) / 60.0)
    ms_dur = rs_vis.uniform(*p.microsleep_s, size=len(ms_on))
    closures = sorted(zip(np.r_[blink_on, ms_on].tolist(), np.r_[blink_dur, ms_dur].tolist()))
    for on, dur in closures:
        a, b = np.searchsorted(t_frame, [on, on + dur])
        ear_val[a:b] = CLOSED_EAR + 0.01 * rs_vis.standard_normal(b - a)
    ear_val = np.clip(ear_val, 0.01, None)

    mar_val = 0.2 + 0.02 * rs_vis.standard_normal(n_frames)
    yawn_on = _poisson_events(rs_vis, _mix(A.yawn_rate_per_min, D.yawn_rate_per_min, iv) / 60.0)
    for on in yawn_on:
        dur = rs_vis.uniform(*p.yawn_s)
        a, b = np.searchsorted(t_frame, [on, on + dur])
        mar_val[a:b] = 0.8 + 0.03 * rs_vis.standard_normal(b - a)
    mar_val = np.clip(mar_val, 0.02, None)

    dx = np.cumsum(0.05 * rs_vis.standard_normal(n_frames))
    dy = np.cumsum(0.05 * rs_vis.standard_normal(n_frames))
    dx -= np.linspace(0, dx[-1], n_frames)
    dy -= np.linspace(0, dy[-1], n_frames)
    left = np.round(eye_points(LEFT_EYE_CENTER, ear_val, dx, dy), 6)
    right = np.round(eye_points(RIGHT_EYE_CENTER, ear_val, dx, dy), 6)
    mouth = np.round(mouth_points(MOUTH_CENTER, mar_val, dx, dy), 6)

    drop_sec = rs_art.random(n_steps) < p.landmark_dropout_prob
    valid = ~drop_sec[sec]
    left[~valid] = 0.0
    right[~valid] = 0.0
    mouth[~valid] = 0.0

    offset_us = int(rs_art.integers(0, int(p.max_clock_offset_ms * 1000) + 1))
    frames = Frames(
        t_us=frame_times_us(k, fps) + offset_us,
        left_eye=left,
        right_eye=right,
        mouth=mouth,
        valid=valid,
    )

    # -- physiology --------------------------------------------------------
    fs = p.fs
    n = int(round(n_steps * fs))
    ssec = np.minimum((np.arange(n) / fs).astype(int), n_steps - 1)
    ips = ip[ssec]

    eeg = np.zeros(n)
    for band, (lo_b, hi_b) in GEN_BANDS.items():
        g = _mix(getattr(A, f"{band}_gain"), getattr(D, f"{band}_gain"), ips)
        eeg += g * _band_noise(rs_eeg, n, fs, lo_b, hi_b)
    eeg = p.eeg_amplitude * (eeg + p.eeg_noise * rs_eeg.standard_normal(n))

    t_s = np.arange(n) / fs
    eog = _mix(A.eog_level, D.eog_level, ips) * _band_noise(rs_eog, n, fs, 0.3, 3.0)
    for on, dur in closures:
        a, b = np.searchsorted(t_s, [on - 0.05, on + dur + 0.05])
        if b > a:
            eog[a:b] += 3.0 * np.sin(np.linspace(0, np.pi, b - a))
    eog = 20.0 * (eog + p.eog_noise * rs_eog.standard_normal(n))

    beats = []
    t = rs_pulse.uniform(0.1, 0.8)
    while t < n_steps:
        beats.append(t)
        u = ip[min(int(t), n_steps - 1)]
        rr = rs_pulse.normal(_mix(A.rr_mean_ms, D.rr_mean_ms, u), _mix(A.rr_jitter_ms, D.rr_jitter_ms, u))
        t += max(rr, 400.0) / 1000.0
    beats = np.asarray(beats)
    pulse = np.zeros(n)
    half = int(math.ceil(5 * p.pulse_width_s * fs))
    for bt in beats:
        c = int(round(bt * fs))
        a, b = max(c - half, 0), min(c + half + 1, n)
        pulse[a:b] += np.exp(-0.5 * ((t_s[a:b] - bt) / p.pulse_width_s) ** 2)
    pulse = 100.0 * (pulse + p.pulse_noise * rs_pulse.standard_normal(n))

    physio = {}
    for name, x in (("EEG", eeg), ("EOG", eog), ("PULSE", pulse)):
        clip_sec = np.flatnonzero(rs_art.random(n_steps) < p.clip_prob)
        rail = 10.0 * np.std(x)
        for s_ in clip_sec:
            a, b = int(round(s_ * fs)), int(round((s_ + 1) * fs))
            x[a:b] = np.median(x) + rail * (1 if rs_art.random() < 0.5 else -1)
        physio[name] = [PhysioBlock(name, fs, np.round(x, 4), 0)]

    labels = [(s_ * US_PER_S, DROWSY if st else ALERT) for s_, st in enumerate(states.tolist())]
    markers = [
        {"video_us": int(s_ * US_PER_S) + offset_us, "physio_us": int(s_ * US_PER_S)}
        for s_ in np.arange(0, n_steps, p.sync_every_s)
    ]
    session = Session(
        id=session_id or f"session-{seed}",
        subject_id=subject_id,
        fps=fps,
        frames=frames,
        physio=physio,
        labels=labels,
        sync_markers=markers,
        channel_fs={"EEG": fs, "EOG": fs, "PULSE": fs},
    )
    if not return_truth:
        return session
    truth = GroundTruth(
        states=states,
        beat_times_s=beats,
        intended_ear=ear_val,
        vision_intensity=iv,
        physio_intensity=ip,
        clock_offset_us=offset_us,
        blinks=closures,
    )
    return session, truth


def jitter_params(params: GenParams, rng: np.random.Generator) -> GenParams:
    """Scale each emission mean by one subject factor in [1 - j, 1 + j], shared by both states."""
    j = params.subject_jitter
    factors = {name: float(rng.uniform(1 - j, 1 + j)) for name in JITTERED}
    alert = replace(params.alert, **{k: getattr(params.alert, k) * f for k, f in factors.items()})
    drowsy = replace(params.drowsy, **{k: getattr(params.drowsy, k) * f for k, f in factors.items()})
    return replace(params, alert=alert, drowsy=drowsy)


def subject_params(seed: int, subject: int, params: GenParams) -> GenParams:
    return jitter_params(params, np.random.default_rng(np.random.SeedSequence([seed, 0x5B1, subject])))


def generate_dataset(
    seed: int,
    n_sessions: int,
    n_subjects: int,
    params: GenParams | None = None,
    duration_s: float = 300.0,
) -> list[Session]:
    """Sessions dealt round-robin to subjects; session ``i`` uses seed ``seed + i``."""
    if not n_sessions >= n_subjects >= 1:
        raise ValueError("need n_sessions >= n_subjects >= 1")
    params = (params or GenParams()).validate()
    per_subject = [subject_params(seed, j, params) for j in range(n_subjects)]
    out = []
    for i in range(n_sessions):
        j = i % n_subjects
        out.append(
            generate_session(
                seed + i,
                duration_s,
                per_subject[j],
                session_id=f"s{i:03d}",
                subject_id=f"subj{j:02d}",
            )
        )
    return out
