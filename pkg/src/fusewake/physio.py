"""Physiological signal conditioning and window features (EEG, EOG, pulse)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal as sps

from .core import Window
from .vision import MissingModalityError

PHYSIO_FEATURES = (
    "delta",
    "theta",
    "alpha",
    "beta",
    "theta_alpha_beta_ratio",
    "mean_rr_ms",
    "sdnn_ms",
    "rmssd_ms",
    "eog_var",
    "eog_zcr",
)

DEFAULT_BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
}


class SignalTooShortError(ValueError):
    pass


class ZeroVarianceError(ValueError):
    pass


class InsufficientPeaksError(ValueError):
    pass


class ArtifactRejectedError(ValueError):
    """Window discarded because too many samples were artifacts."""

    def __init__(self, channel: str, fraction: float):
        self.channel = channel
        self.fraction = fraction
        super().__init__(f"{channel}: {fraction:.0%} of samples clipped; window discarded")


@dataclass(frozen=True)
class FilterSpec:
    lo_hz: float = 0.5
    hi_hz: float = 40.0
    order: int = 4

    def check(self, fs: float) -> None:
        if not 0 < self.lo_hz < self.hi_hz:
            raise ValueError("need 0 < lo_hz < hi_hz")
        if self.hi_hz >= fs / 2:
            raise ValueError(f"band edge {self.hi_hz} Hz exceeds Nyquist ({fs / 2} Hz)")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")


@dataclass(frozen=True)
class NormalizationStats:
    mu: float
    sigma: float


@dataclass(frozen=True)
class BandPowers:
    delta: float
    theta: float
    alpha: float
    beta: float

    @property
    def total(self) -> float:
        return self.delta + self.theta + self.alpha + self.beta

    @property
    def drowsiness_ratio(self) -> float:
        """(theta + alpha) / beta."""
        return (self.theta + self.alpha) / self.beta if self.beta > 0 else 0.0


@dataclass(frozen=True)
class HRVMetrics:
    mean_rr_ms: float
    sdnn_ms: float
    rmssd_ms: float


@dataclass(frozen=True)
class PhysioConfig:
    filter: FilterSpec = field(default_factory=FilterSpec)
    clip_factor: float = 5.0
    max_clip_fraction: float = 0.2
    bands: dict = field(default_factory=lambda: dict(DEFAULT_BANDS))


@dataclass
class PhysioFeatures:
    delta: float
    theta: float
    alpha: float
    beta: float
    theta_alpha_beta_ratio: float
    mean_rr_ms: float
    sdnn_ms: float
    rmssd_ms: float
    eog_var: float
    eog_zcr: float
    quality: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PHYSIO_FEATURES], dtype=float)

    def as_dict(self) -> dict:
        return asdict(self)


_SOS_CACHE: dict = {}


def _design(fs: float, spec: FilterSpec) -> np.ndarray:
    key = (fs, spec.lo_hz, spec.hi_hz, spec.order)
    if key not in _SOS_CACHE:
        _SOS_CACHE[key] = sps.butter(spec.order, [spec.lo_hz, spec.hi_hz], btype="bandpass", fs=fs, output="sos")
    return _SOS_CACHE[key]


def bandpass(x, fs: float, spec: FilterSpec | None = None) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward and backward pass)."""
    spec = spec or FilterSpec()
    spec.check(fs)
    x = np.asarray(x, dtype=float)
    if len(x) < 3 * spec.order:
        raise SignalTooShortError(f"signal too short for order-{spec.order} filter ({len(x)} samples)")
    sos = _design(fs, spec)
    padlen = min(3 * (2 * len(sos) + 1), len(x) - 1)
    return sps.sosfiltfilt(sos, x, padlen=padlen)


def zscore(x) -> tuple[np.ndarray, NormalizationStats]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValueError("zscore needs at least 2 samples")
    mu = float(np.mean(x))
    sigma = float(np.std(x, ddof=1))
    if sigma == 0 or not math.isfinite(sigma):
        raise ZeroVarianceError("zero variance")
    return (x - mu) / sigma, NormalizationStats(mu, sigma)


def band_powers(x, fs: float, bands: dict | None = None) -> BandPowers:
    """Band power from a Welch estimate (2 s Hann segments, 50% overlap).

    Each band integrates the density over bins in ``[lo, hi)``.
    """
    bands = bands or DEFAULT_BANDS
    x = np.asarray(x, dtype=float)
    nper = int(round(2 * fs))
    if len(x) < nper:
        raise SignalTooShortError("band powers need at least 2 s of samples")
    freqs, psd = sps.welch(x, fs=fs, window="hann", nperseg=nper, noverlap=nper // 2, detrend=False)
    df = freqs[1] - freqs[0]
    out = {}
    for name in ("delta", "theta", "alpha", "beta"):
        lo, hi = bands[name]
        m = (freqs >= lo) & (freqs < hi)
        out[name] = float(np.sum(psd[m]) * df)
    return BandPowers(**out)


def band_power_between(x, fs: float, lo: float, hi: float) -> float:
    """Welch band power over ``[lo, hi)`` with the same estimator as band_powers."""
    nper = int(round(2 * fs))
    freqs, psd = sps.welch(np.asarray(x, float), fs=fs, window="hann", nperseg=nper, noverlap=nper // 2, detrend=False)
    m = (freqs >= lo) & (freqs < hi)
    return float(np.sum(psd[m]) * (freqs[1] - freqs[0]))


def pulse_peak_indices(x, fs: float, spec: FilterSpec | None = None) -> np.ndarray:
    """Indices of pulse peaks: local maxima of the band-passed signal above
    mean + 0.5 std, at least 300 ms apart."""
    y = bandpass(np.asarray(x, dtype=float), fs, spec)
    if np.std(y) == 0:
        return np.zeros(0, dtype=int)
    height = float(np.mean(y) + 0.5 * np.std(y))
    peaks, _ = sps.find_peaks(y, height=height, distance=max(1, math.ceil(0.3 * fs)))
    return peaks


def detect_pulse_peaks(x, fs: float, spec: FilterSpec | None = None) -> np.ndarray:
    """RR intervals in ms between successive pulse peaks."""
    if len(x) < 2 * fs:
        raise SignalTooShortError("pulse detection needs at least 2 s of samples")
    peaks = pulse_peak_indices(x, fs, spec)
    if len(peaks) < 2:
        raise InsufficientPeaksError("insufficient peaks")
    return np.diff(peaks) * 1000.0 / fs


def clean_rr_intervals(x, bad, fs: float, spec: FilterSpec | None = None) -> np.ndarray:
    """RR intervals (ms) of ``x``, skipping intervals that span rejected samples.

    Interpolated stretches can hide a beat, which would otherwise show up
    as a doubled interval.
    """
    if len(x) < 2 * fs:
        raise SignalTooShortError("pulse detection needs at least 2 s of samples")
    peaks = pulse_peak_indices(x, fs, spec)
    bad_before = np.concatenate(([0], np.cumsum(np.asarray(bad, dtype=int))))
    spans_bad = bad_before[peaks[1:] + 1] - bad_before[peaks[:-1]] > 0
    rr = (np.diff(peaks) * 1000.0 / fs)[~spans_bad]
    if len(rr) < 2:
        raise InsufficientPeaksError("insufficient peaks")
    return rr


def hrv_metrics(rr) -> HRVMetrics:
    rr = np.asarray(rr, dtype=float)
    if len(rr) < 2:
        raise ValueError("hrv_metrics needs at least 2 intervals")
    return HRVMetrics(
        mean_rr_ms=float(np.mean(rr)),
        # shifting by the first interval keeps equal intervals at exactly zero spread
        sdnn_ms=float(np.std(rr - rr[0], ddof=1)),
        rmssd_ms=float(np.sqrt(np.mean(np.diff(rr) ** 2))),
    )


def artifact_scale(x: np.ndarray, segment: int) -> float:
    """Typical std of ``x``: the median std over consecutive ``segment``-sample pieces.

    Saturated stretches only move a minority of pieces, so they do not
    inflate the scale they are tested against; periodic peaks (pulse) sit in
    every piece and are counted as normal activity.
    """
    n_seg = len(x) // segment
    if segment < 2 or n_seg < 1:
        return float(np.std(x))
    pieces = x[: n_seg * segment].reshape(n_seg, segment)
    return float(np.median(np.std(pieces, axis=1)))


def reject_artifacts(x, clip_factor: float = 5.0, fs: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Replace samples further than ``clip_factor`` scales from the median by linear interpolation.

    With ``fs`` the scale is the median of 1 s standard deviations (see
    :func:`artifact_scale`); without it, the plain std. Returns
    (cleaned, artifact mask).
    """
    x = np.asarray(x, dtype=float)
    med = np.median(x)
    scale = artifact_scale(x, int(round(fs)) if fs else len(x))
    if scale == 0:
        return x.copy(), np.zeros(len(x), dtype=bool)
    bad = np.abs(x - med) > clip_factor * scale
    out = x.copy()
    if bad.any() and not bad.all():
        idx = np.arange(len(x))
        out[bad] = np.interp(idx[bad], idx[~bad], x[~bad])
    return out, bad


def zero_crossing_rate(x, fs: float) -> float:
    """Sign changes per second."""
    s = np.signbit(np.asarray(x))
    return float(np.count_nonzero(s[1:] != s[:-1]) * fs / max(len(x) - 1, 1))


def physio_features(window: Window, cfg: PhysioConfig | None = None) -> PhysioFeatures:
    """Per-channel artifact rejection, band-pass, z-score, then features.

    Raises :class:`MissingModalityError` if a channel is absent and
    :class:`ArtifactRejectedError` if a channel exceeds the clip budget.
    """
    cfg = cfg or PhysioConfig()
    cleaned, masks, n_bad, n_total = {}, {}, 0, 0
    for ch in ("EEG", "EOG", "PULSE"):
        x = window.physio.get(ch)
        if x is None or len(x) == 0:
            raise MissingModalityError(f"channel {ch} absent from window")
        clean, bad = reject_artifacts(x, cfg.clip_factor, window.fs[ch])
        frac = float(bad.mean())
        if frac > cfg.max_clip_fraction:
            raise ArtifactRejectedError(ch, frac)
        cleaned[ch] = clean
        masks[ch] = bad
        n_bad += int(bad.sum())
        n_total += len(x)

    fs_eeg = window.fs["EEG"]
    eeg, _ = zscore(bandpass(cleaned["EEG"], fs_eeg, cfg.filter))
    bp = band_powers(eeg, fs_eeg, cfg.bands)

    fs_eog = window.fs["EOG"]
    eog_f = bandpass(cleaned["EOG"], fs_eog, cfg.filter)
    eog_z, _ = zscore(eog_f)

    rr = clean_rr_intervals(cleaned["PULSE"], masks["PULSE"], window.fs["PULSE"], cfg.filter)
    hrv = hrv_metrics(rr)

    return PhysioFeatures(
        delta=bp.delta,
        theta=bp.theta,
        alpha=bp.alpha,
        beta=bp.beta,
        theta_alpha_beta_ratio=bp.drowsiness_ratio,
        mean_rr_ms=hrv.mean_rr_ms,
        sdnn_ms=hrv.sdnn_ms,
        rmssd_ms=hrv.rmssd_ms,
        eog_var=float(np.var(eog_f, ddof=1)),
        eog_zcr=zero_crossing_rate(eog_z, fs_eog),
        quality=1.0 - n_bad / n_total,
    )
