"""Splits, confusion/metrics, ROC/AUC and latency statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import DROWSY, STATES


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    confusion: ConfusionMatrix
    auc: float | None = None

    @property
    def fn_fp_ratio(self) -> float | None:
        c = self.confusion
        return c.fn / c.fp if c.fp else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fn_fp_ratio"] = self.fn_fp_ratio
        return d


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p95_ms: float
    max_ms: float
    frames: int

    def as_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "p95_ms": self.p95_ms, "max_ms": self.max_ms, "frames": self.frames}


def _as_positive(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "USO":
        bad = set(arr.tolist()) - set(STATES)
        if bad:
            raise ValueError(f"unknown states {sorted(bad)}")
        return arr == DROWSY
    return arr.astype(int) == 1


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with DROWSY (or 1) as the positive class."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("nothing to evaluate")
    p, t = _as_positive(predictions), _as_positive(labels)
    return ConfusionMatrix(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        tn=int(np.sum(~p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def f1_score(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy/precision/recall/F1; undefined ratios are ``None`` rather than 0."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        confusion=cm,
    )


def roc_auc(scores, labels) -> tuple[np.ndarray, float]:
    """ROC points (fpr, tpr) from a sweep over unique scores, and trapezoidal AUC.

    Equal scores enter the curve together, so ties contribute a diagonal
    segment.
    """
    s = np.asarray(scores, dtype=float)
    t = _as_positive(labels)
    if len(s) != len(t):
        raise ValueError("length mismatch")
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("single-class labels: ROC undefined")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(t)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return np.column_stack([fpr, tpr]), auc


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=float)
    pred = (scores > threshold).astype(int)
    report = classification_metrics(confusion(pred, _as_positive(labels).astype(int)))
    try:
        report.auc = roc_auc(scores, labels)[1]
    except ValueError:
        report.auc = None
    return report


def split_dataset(sessions: Sequence, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> tuple[list, list, list]:
    """Subject-grouped train/val/test split.

    Subjects are shuffled with ``seed`` and walked in order; each subject goes
    to the split whose cumulative session target contains the midpoint of
    its sessions, so session counts land as close to ``ratios`` as whole
    subjects allow.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1 (got {sum(ratios)})")
    by_subject: dict[str, list] = {}
    for s in sessions:
        by_subject.setdefault(s.subject_id, []).append(s)
    subjects = sorted(by_subject)
    if len(subjects) < 3:
        raise ValueError("need at least 3 subjects for a grouped split")
    rng = np.random.default_rng(seed)
    subjects = [subjects[i] for i in rng.permutation(len(subjects))]

    n = len(sessions)
    bounds = np.cumsum(ratios) * n
    assign, cum = [], 0
    for subj in subjects:
        k = len(by_subject[subj])
        mid = cum + k / 2.0
        assign.append(min(int(np.searchsorted(bounds, mid, side="left")), 2))
        cum += k
    # every split needs at least one subject
    for target in range(3):
        if target not in assign:
            counts = [assign.count(i) for i in range(3)]
            donor = int(np.argmax(counts))
            idx = max(i for i, a in enumerate(assign) if a == donor) if target > donor else min(
                i for i, a in enumerate(assign) if a == donor
            )
            assign[idx] = target
    parts: tuple[list, list, list] = ([], [], [])
    for subj, a in zip(subjects, assign):
        parts[a].extend(by_subject[subj])
    return parts


def latency_stats(per_frame_ms: Sequence[float]) -> LatencyStats:
    x = np.asarray(per_frame_ms, dtype=float)
    if x.size == 0:
        raise ValueError("no frames measured")
    return LatencyStats(
        mean_ms=float(np.mean(x)),
        p95_ms=float(np.percentile(x, 95)),
        max_ms=float(np.max(x)),
        frames=int(x.size),
    )


# -- report serialisation ---------------------------------------------------

CSV_FIELDS = ("path", "accuracy", "precision", "recall", "f1", "auc", "tp", "fp", "tn", "fn", "fn_fp_ratio")


def report_json(rows: dict[str, MetricsReport], extra: dict | None = None) -> str:
    doc = {"paths": {k: v.to_dict() for k, v in rows.items()}}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_csv(rows: dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for path, r in rows.items():
        c = r.confusion
        w.writerow(
            [
                path,
                *("" if v is None else repr(float(v)) for v in (r.accuracy, r.precision, r.recall, r.f1, r.auc)),
                c.tp,
                c.fp,
                c.tn,
                c.fn,
                "" if r.fn_fp_ratio is None else repr(r.fn_fp_ratio),
            ]
        )
    return buf.getvalue()
