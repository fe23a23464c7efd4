"""Run configuration: every pipeline tunable, strict JSON loading."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import TrainConfig
from .physio import DEFAULT_BANDS, FilterSpec, PhysioConfig
from .vision import VisionConfig

CONFIG_VERSION = "fusewake-config/1"


class ConfigError(ValueError):
    pass


def _default_space() -> dict:
    return {"learning_rate": [0.005, 0.2], "l2": [1e-6, 1e-2], "hidden_units": [4, 32]}


@dataclass
class RunConfig:
    version: str = CONFIG_VERSION
    # windowing / alignment
    window_s: float = 60.0
    stride_s: float = 5.0
    align_tolerance_ms: float = 10.0
    # vision
    ear_threshold: float = 0.2
    blink_min_frames: int = 2
    mar_threshold: float = 0.6
    yawn_min_s: float = 1.5
    # physio
    filter_lo_hz: float = 0.5
    filter_hi_hz: float = 40.0
    filter_order: int = 4
    clip_factor: float = 5.0
    max_clip_fraction: float = 0.2
    bands: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_BANDS.items()})
    # fusion
    mi_bins: int = 10
    select_k: int = 10
    evr_target: float = 0.95
    # training
    learning_rate: float = 0.05
    l2: float = 1e-4
    hidden_units: int = 16
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    cv_folds: int = 5
    search_budget: int = 0
    search_space: dict = field(default_factory=_default_space)
    # split / decision
    split_ratios: list = field(default_factory=lambda: [0.7, 0.15, 0.15])
    split_seed: int = 42
    decision_threshold: float = 0.5
    alarm_alpha: float = 0.3
    alarm_threshold: float = 0.5
    alarm_consecutive: int = 3

    def validate(self) -> "RunConfig":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        positive = (
            "window_s", "stride_s", "align_tolerance_ms", "ear_threshold", "blink_min_frames",
            "mar_threshold", "yawn_min_s", "filter_lo_hz", "filter_hi_hz", "filter_order",
            "clip_factor", "max_clip_fraction", "mi_bins", "select_k", "evr_target",
            "learning_rate", "hidden_units", "max_epochs", "patience", "batch_size",
            "alarm_alpha", "alarm_consecutive",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.stride_s > self.window_s:
            raise ConfigError("stride_s must not exceed window_s")
        if self.filter_lo_hz >= self.filter_hi_hz:
            raise ConfigError("filter_lo_hz must be below filter_hi_hz")
        if self.mi_bins < 2:
            raise ConfigError("mi_bins must be >= 2")
        if self.evr_target > 1 or self.alarm_alpha > 1 or self.max_clip_fraction > 1:
            raise ConfigError("evr_target, alarm_alpha and max_clip_fraction must be <= 1")
        if self.l2 < 0 or self.search_budget < 0:
            raise ConfigError("l2 and search_budget must be non-negative")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if self.patience >= self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")
        if set(self.bands) != set(DEFAULT_BANDS):
            raise ConfigError(f"bands must define exactly {sorted(DEFAULT_BANDS)}")
        for name, (lo, hi) in self.bands.items():
            if not 0 <= lo < hi:
                raise ConfigError(f"band {name} must satisfy 0 <= lo < hi")
        if len(self.split_ratios) != 3 or any(r <= 0 for r in self.split_ratios):
            raise ConfigError("split_ratios must be three positive numbers")
        if abs(sum(self.split_ratios) - 1) > 1e-9:
            raise ConfigError("split_ratios must sum to 1")
        if not 0 < self.decision_threshold < 1 or not 0 < self.alarm_threshold < 1:
            raise ConfigError("thresholds must lie in (0, 1)")
        return self

    def vision(self) -> VisionConfig:
        return VisionConfig(self.ear_threshold, self.blink_min_frames, self.mar_threshold, self.yawn_min_s)

    def physio(self) -> PhysioConfig:
        return PhysioConfig(
            filter=FilterSpec(self.filter_lo_hz, self.filter_hi_hz, self.filter_order),
            clip_factor=self.clip_factor,
            max_clip_fraction=self.max_clip_fraction,
            bands={k: tuple(v) for k, v in self.bands.items()},
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            l2=self.l2,
            hidden_units=self.hidden_units,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d).validate()


def load_config(path: str | Path | None) -> RunConfig:
    """Missing keys take defaults; unknown keys and invalid values raise :class:`ConfigError`."""
    if path is None:
        return RunConfig().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc.msg} (line {exc.lineno})") from None
    return RunConfig.from_dict(data)
