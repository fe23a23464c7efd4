"""End-to-end glue: sessions to feature matrices, model bundle fitting and scoring."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .core import DROWSY, Session, Window, align_streams, window_session
from .evaluation import MetricsReport, evaluate_scores, split_dataset
from .fusion import (
    PHYSIO_COLUMNS,
    VISION_COLUMNS,
    FeatureMatrix,
    PCAModel,
    ScalerStats,
    fit_pca,
    fit_scaler,
    fuse_scores,
    fusion_weights,
    pca_transform,
    select_features,
)
from .model import LOGISTIC, MLP, ClassifierModel, TrainConfig, predict_score, random_search, train_classifier
from .physio import ArtifactRejectedError, PhysioFeatures, physio_features
from .vision import MissingModalityError, VisionFeatures, vision_features

log = logging.getLogger(__name__)

BUNDLE_VERSION = "fusewake-model/1"
PATHS = ("vision_only", "physio_only", "feature_fusion", "decision_fusion")
# reported next to the four paths, not as a row of its own
AUX_PATHS = ("fusion_average",)
COLUMNS = VISION_COLUMNS + PHYSIO_COLUMNS


@dataclass
class WindowRecord:
    session_id: str
    subject_id: str
    start_us: int
    label: str
    vision: VisionFeatures | None
    physio: PhysioFeatures | None
    physio_error: str | None = None

    @property
    def complete(self) -> bool:
        return self.vision is not None and self.physio is not None


def featurize_window(window: Window, cfg: RunConfig) -> WindowRecord:
    try:
        fv = vision_features(window, cfg.vision())
    except MissingModalityError:
        fv = None
    fp, err = None, None
    try:
        fp = physio_features(window, cfg.physio())
    except ArtifactRejectedError as exc:
        err = "artifact"
        log.debug("%s@%d: %s", window.session_id, window.start_us, exc)
    except (MissingModalityError, ValueError) as exc:
        err = type(exc).__name__
    return WindowRecord(window.session_id, window.subject_id, window.start_us, window.label, fv, fp, err)


def featurize_session(session: Session, cfg: RunConfig) -> list[WindowRecord]:
    aligned = align_streams(session, cfg.align_tolerance_ms)
    return [featurize_window(w, cfg) for w in window_session(aligned, cfg.window_s, cfg.stride_s)]


def records_to_matrix(records: Sequence[WindowRecord]) -> FeatureMatrix:
    """Fused-column matrix over windows where both modalities are present."""
    rows = [r for r in records if r.complete]
    if not rows:
        return FeatureMatrix(COLUMNS, np.zeros((0, len(COLUMNS))), np.zeros(0, dtype=int), np.zeros(0, dtype=str))
    X = np.array([np.concatenate([r.vision.vector(), r.physio.vector()]) for r in rows])
    return FeatureMatrix(
        COLUMNS,
        X,
        np.array([1 if r.label == DROWSY else 0 for r in rows]),
        np.array([r.subject_id for r in rows]),
        np.array([r.vision.quality for r in rows]),
        np.array([r.physio.quality for r in rows]),
    )


def sessions_to_matrix(sessions: Sequence[Session], cfg: RunConfig) -> FeatureMatrix:
    records = [r for s in sessions for r in featurize_session(s, cfg)]
    return records_to_matrix(records)


@dataclass
class ModelBundle:
    scaler: ScalerStats
    selected_columns: list[str]
    pca: PCAModel
    vision_head: ClassifierModel
    physio_head: ClassifierModel
    fused_net: ClassifierModel
    run_config: RunConfig
    train_config: TrainConfig | None = None
    metrics: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    search_ledger: list = field(default_factory=list)

    @property
    def vision_columns(self) -> list[str]:
        return [c for c in self.scaler.columns if c.startswith("v.")]

    @property
    def physio_columns(self) -> list[str]:
        return [c for c in self.scaler.columns if c.startswith("p.")]

    def fused_inputs(self, scaled: FeatureMatrix) -> np.ndarray:
        return pca_transform(self.pca, scaled.select(self.selected_columns).X)

    def score_matrix(self, m: FeatureMatrix) -> dict[str, np.ndarray]:
        """Scores for every path; rows of ``m`` carry the fused columns and qualities."""
        scaled = self.scaler.transform(m)
        s_v = predict_score(self.vision_head, scaled.select(self.vision_columns).X)
        s_p = predict_score(self.physio_head, scaled.select(self.physio_columns).X)
        s_f = predict_score(self.fused_net, self.fused_inputs(scaled))
        s_d = np.array(
            [
                fuse_scores(fusion_weights(qv, qp), a, b)
                for qv, qp, a, b in zip(m.quality_v, m.quality_p, s_v, s_p)
            ]
        )
        return {
            "vision_only": s_v,
            "physio_only": s_p,
            "feature_fusion": s_f,
            "decision_fusion": s_d,
            "fusion_average": 0.5 * (s_f + s_d),
        }

    def score_record(self, r: WindowRecord) -> dict[str, float | None]:
        """Per-window scores; a missing modality drops to the remaining one."""
        out: dict[str, float | None] = {k: None for k in PATHS}
        if r.complete:
            m = records_to_matrix([r])
            return {k: float(v[0]) for k, v in self.score_matrix(m).items() if k in PATHS}
        if r.vision is not None:
            x = np.concatenate([r.vision.vector(), np.zeros(len(PHYSIO_COLUMNS))])
            scaled = self.scaler.transform_vector(COLUMNS, x)
            idx = [self.scaler.columns.index(c) for c in self.vision_columns]
            out["vision_only"] = out["decision_fusion"] = predict_score(self.vision_head, scaled[idx])
        elif r.physio is not None:
            x = np.concatenate([np.zeros(len(VISION_COLUMNS)), r.physio.vector()])
            scaled = self.scaler.transform_vector(COLUMNS, x)
            idx = [self.scaler.columns.index(c) for c in self.physio_columns]
            out["physio_only"] = out["decision_fusion"] = predict_score(self.physio_head, scaled[idx])
        return out

    def evaluate(self, m: FeatureMatrix, paths: Sequence[str] = PATHS) -> dict[str, MetricsReport]:
        scores = self.score_matrix(m)
        thr = self.run_config.decision_threshold
        return {path: evaluate_scores(scores[path], m.y, thr) for path in paths}

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "scaler": self.scaler.to_dict(),
            "selected_columns": list(self.selected_columns),
            "pca": self.pca.to_dict(),
            "heads": {"vision": self.vision_head.to_dict(), "physio": self.physio_head.to_dict()},
            "fused_net": self.fused_net.to_dict(),
            "train_config": asdict(self.train_config or self.run_config.train()),
            "run_config": self.run_config.to_dict(),
            "metrics": self.metrics,
            "split": self.split,
            "search_ledger": self.search_ledger,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported model bundle version {d.get('version')!r}")
        return cls(
            scaler=ScalerStats.from_dict(d["scaler"]),
            selected_columns=list(d["selected_columns"]),
            pca=PCAModel.from_dict(d["pca"]),
            vision_head=ClassifierModel.from_dict(d["heads"]["vision"]),
            physio_head=ClassifierModel.from_dict(d["heads"]["physio"]),
            fused_net=ClassifierModel.from_dict(d["fused_net"]),
            run_config=RunConfig.from_dict(d["run_config"]),
            train_config=TrainConfig(**d["train_config"]),
            metrics=d.get("metrics", {}),
            split=d.get("split", {}),
            search_ledger=d.get("search_ledger", []),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_bundle(train: FeatureMatrix, val: FeatureMatrix, cfg: RunConfig) -> ModelBundle:
    """Fit scaler, modality heads, selection, PCA and the fused network on training rows.

    Validation rows drive early stopping only.
    """
    cfg = cfg.validate()
    tcfg = cfg.train()
    scaler = fit_scaler(train)
    tr, va = scaler.transform(train), scaler.transform(val)

    vcols = [c for c in scaler.columns if c.startswith("v.")]
    pcols = [c for c in scaler.columns if c.startswith("p.")]
    vision_head = train_classifier(LOGISTIC, tr.select(vcols), va.select(vcols), tcfg)
    physio_head = train_classifier(LOGISTIC, tr.select(pcols), va.select(pcols), tcfg)

    selected = select_features(tr, cfg.select_k, cfg.mi_bins)
    pca = fit_pca(tr.select(selected).X, cfg.evr_target)
    ztr = FeatureMatrix(
        tuple(f"pc{i}" for i in range(pca.n_components)),
        pca_transform(pca, tr.select(selected).X),
        tr.y,
        tr.groups,
    )
    zva = FeatureMatrix(ztr.columns, pca_transform(pca, va.select(selected).X), va.y, va.groups)

    ledger = []
    if cfg.search_budget > 0:
        tcfg, ledger = random_search(
            {k: tuple(v) for k, v in cfg.search_space.items()},
            cfg.search_budget,
            ztr,
            seed=cfg.seed,
            k=cfg.cv_folds,
            base=tcfg,
        )
    fused_net = train_classifier(MLP, ztr, zva, tcfg)
    bundle = ModelBundle(
        scaler, selected, pca, vision_head, physio_head, fused_net, cfg, train_config=tcfg, search_ledger=ledger
    )
    bundle.metrics = {"validation": {k: v.to_dict() for k, v in bundle.evaluate(val).items()}}
    return bundle


def train_pipeline(sessions: Sequence[Session], cfg: RunConfig) -> ModelBundle:
    """Subject-grouped split, featurisation and :func:`fit_bundle`; the split is recorded."""
    tr, va, te = split_dataset(sessions, cfg.split_ratios, cfg.split_seed)
    bundle = fit_bundle(sessions_to_matrix(tr, cfg), sessions_to_matrix(va, cfg), cfg)
    bundle.split = {
        "seed": cfg.split_seed,
        **{name: sorted({s.subject_id for s in part}) for name, part in (("train", tr), ("val", va), ("test", te))},
        "sessions": {name: len(part) for name, part in (("train", tr), ("val", va), ("test", te))},
    }
    return bundle


def held_out_sessions(bundle: ModelBundle, sessions: Sequence[Session]) -> list[Session]:
    """Sessions of the bundle's held-out test subjects, or all sessions if none match."""
    held_out = set(bundle.split.get("test", ()))
    chosen = [s for s in sessions if s.subject_id in held_out]
    return chosen or list(sessions)


def evaluate_sessions(
    bundle: ModelBundle, sessions: Sequence[Session], paths: Sequence[str] = PATHS
) -> dict[str, MetricsReport]:
    return bundle.evaluate(sessions_to_matrix(sessions, bundle.run_config), paths)
