"""Feature-level fusion (concatenation, scaling, selection, PCA) and decision-level fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .physio import PHYSIO_FEATURES, PhysioFeatures
from .vision import VISION_FEATURES, MissingModalityError, VisionFeatures

VISION_COLUMNS = tuple(f"v.{k}" for k in VISION_FEATURES)
PHYSIO_COLUMNS = tuple(f"p.{k}" for k in PHYSIO_FEATURES)


class NoUsableModalityError(ValueError):
    pass


@dataclass
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class FeatureMatrix:
    """Rows are windows, columns named features.

    ``y`` is 1 for DROWSY, ``groups`` the subject id of each row.
    """

    columns: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray = None
    quality_v: np.ndarray = None
    quality_p: np.ndarray = None

    def __post_init__(self):
        self.columns = tuple(self.columns)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), len(self.columns))
        self.y = np.asarray(self.y, dtype=int)
        n = len(self.y)
        if self.groups is None:
            self.groups = np.array(["g0"] * n)
        if self.quality_v is None:
            self.quality_v = np.ones(n)
        if self.quality_p is None:
            self.quality_p = np.ones(n)

    def __len__(self) -> int:
        return len(self.y)

    def select(self, columns: Sequence[str]) -> "FeatureMatrix":
        idx = [self.columns.index(c) for c in columns]
        return FeatureMatrix(tuple(columns), self.X[:, idx], self.y, self.groups, self.quality_v, self.quality_p)

    def rows(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(
            self.columns, self.X[mask], self.y[mask], self.groups[mask], self.quality_v[mask], self.quality_p[mask]
        )

    @classmethod
    def stack(cls, parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        cols = parts[0].columns
        return cls(
            cols,
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.groups for p in parts]),
            np.concatenate([p.quality_v for p in parts]),
            np.concatenate([p.quality_p for p in parts]),
        )


def concat_features(fv, fp) -> FeatureVector:
    """``[F_vision ; F_physio]`` with ``v.``/``p.`` column prefixes, vision first.

    Accepts feature dataclasses or ``FeatureVector`` instances.
    """
    if fv is None or fp is None:
        raise MissingModalityError("missing modality")
    v, p = _as_vector(fv, "v."), _as_vector(fp, "p.")
    if len(v) == 0 or len(p) == 0:
        raise MissingModalityError("missing modality")
    return FeatureVector(v.names + p.names, np.concatenate([v.values, p.values]))


def _as_vector(f, prefix: str) -> FeatureVector:
    if isinstance(f, FeatureVector):
        return f
    if isinstance(f, VisionFeatures):
        return FeatureVector(tuple(prefix + k for k in VISION_FEATURES), f.vector())
    if isinstance(f, PhysioFeatures):
        return FeatureVector(tuple(prefix + k for k in PHYSIO_FEATURES), f.vector())
    raise TypeError(f"cannot concatenate {type(f).__name__}")


# -- scaling ----------------------------------------------------------------


@dataclass
class ScalerStats:
    columns: tuple[str, ...]
    mu: np.ndarray
    sigma: np.ndarray
    dropped: tuple[str, ...] = ()

    def transform(self, m: FeatureMatrix) -> FeatureMatrix:
        sub = m.select(self.columns)
        sub.X = (sub.X - self.mu) / self.sigma
        return sub

    def transform_vector(self, names: Sequence[str], values: np.ndarray) -> np.ndarray:
        pos = {n: i for i, n in enumerate(names)}
        x = np.array([values[pos[c]] for c in self.columns])
        return (x - self.mu) / self.sigma

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerStats":
        return cls(tuple(d["columns"]), np.asarray(d["mu"], float), np.asarray(d["sigma"], float), tuple(d["dropped"]))


def fit_scaler(m: FeatureMatrix) -> ScalerStats:
    """Per-column mean and sample std; zero-variance columns are dropped."""
    if len(m) < 2:
        raise ValueError("scaler needs at least 2 rows")
    mu = m.X.mean(axis=0)
    sigma = m.X.std(axis=0, ddof=1)
    keep = sigma > 1e-12 * np.maximum(1.0, np.abs(mu))
    cols = tuple(c for c, k in zip(m.columns, keep) if k)
    dropped = tuple(c for c, k in zip(m.columns, keep) if not k)
    return ScalerStats(cols, mu[keep], sigma[keep], dropped)


# -- selection --------------------------------------------------------------


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Bin index per value using empirical quantile edges (duplicates merged)."""
    edges = np.unique(np.quantile(x, np.arange(1, bins) / bins))
    return np.searchsorted(edges, x, side="right")


def _entropy_bits(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def mutual_information_bits(x: np.ndarray, y: np.ndarray, bins: int = 10) -> float:
    bx = equal_frequency_bins(np.asarray(x, float), bins)
    y = np.asarray(y, dtype=int)
    joint = np.zeros((bx.max() + 1, 2))
    np.add.at(joint, (bx, y), 1)
    hx = _entropy_bits(joint.sum(axis=1))
    hy = _entropy_bits(joint.sum(axis=0))
    hxy = _entropy_bits(joint.ravel())
    return max(0.0, hx + hy - hxy)


def rank_features_mi(m: FeatureMatrix, bins: int = 10) -> list[tuple[str, float]]:
    """Columns sorted by plug-in MI with the label (bits), ties by name."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if len(np.unique(m.y)) < 2:
        raise ValueError("single-class labels: mutual information undefined")
    scores = [(c, mutual_information_bits(m.X[:, j], m.y, bins)) for j, c in enumerate(m.columns)]
    return sorted(scores, key=lambda t: (-t[1], t[0]))


def logistic_coefficients(X: np.ndarray, y: np.ndarray, l2: float = 1e-2, iters: int = 50) -> np.ndarray:
    """L2-regularised logistic regression by Newton iterations; returns weights (no bias)."""
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(d + 1)
    reg = np.full(d + 1, l2 * n)
    reg[-1] = 0.0
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(A @ w, -40, 40)))
        g = A.T @ (p - y) + reg * w
        H = (A * (p * (1 - p))[:, None]).T @ A + np.diag(reg) + 1e-9 * np.eye(d + 1)
        step = np.linalg.solve(H, g)
        w -= step
        if np.max(np.abs(step)) < 1e-10:
            break
    return w[:-1]


def rfe(
    m: FeatureMatrix,
    k: int,
    trainer: Callable[[np.ndarray, np.ndarray], np.ndarray] = logistic_coefficients,
) -> list[str]:
    """Recursive feature elimination down to ``k`` columns.

    Each round standardises the remaining columns, fits ``trainer`` and drops
    the column with the smallest absolute weight (ties: first such column).
    """
    cols = list(m.columns)
    if not 1 <= k <= len(cols):
        raise ValueError(f"k out of range: {k} not in [1, {len(cols)}]")
    while len(cols) > k:
        X = m.select(cols).X
        sd = X.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        Z = (X - X.mean(axis=0)) / sd
        w = np.abs(np.asarray(trainer(Z, m.y), dtype=float))
        worst = int(np.argmin(w))
        cols.pop(worst)
    return cols


def select_features(m: FeatureMatrix, k: int = 10, bins: int = 10, trainer=logistic_coefficients) -> list[str]:
    """MI ranking prunes to 2k candidates, then RFE to k (order preserved from ``m``)."""
    k = min(k, len(m.columns))
    ranked = rank_features_mi(m, bins)
    cand = {c for c, _ in ranked[: 2 * k]}
    ordered = [c for c in m.columns if c in cand]
    return rfe(m.select(ordered), k, trainer)


# -- PCA --------------------------------------------------------------------


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    n_components: int

    @property
    def retained(self) -> np.ndarray:
        return self.components[: self.n_components]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "n_components": self.n_components,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PCAModel":
        return cls(
            np.asarray(d["mean"], float),
            np.asarray(d["components"], float),
            np.asarray(d["eigenvalues"], float),
            np.asarray(d["explained_variance_ratio"], float),
            int(d["n_components"]),
        )


def fit_pca(X, evr_target: float = 0.95) -> PCAModel:
    """Eigendecomposition of the sample covariance; keeps the smallest prefix reaching ``evr_target``."""
    X = np.asarray(X.X if isinstance(X, FeatureMatrix) else X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 0 < evr_target <= 1:
        raise ValueError("evr_target must be in (0, 1]")
    mean = X.mean(axis=0)
    C = np.cov(X - mean, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T
    if vals.sum() <= 0:
        raise ValueError("all-zero variance")
    # sign convention: largest-magnitude entry of each component positive
    for i, c in enumerate(comps):
        if c[np.argmax(np.abs(c))] < 0:
            comps[i] = -c
    evr = vals / vals.sum()
    cum = np.cumsum(evr)
    k = int(np.searchsorted(cum, evr_target - 1e-12) + 1)
    k = min(k, len(vals))
    return PCAModel(mean, comps, vals, evr, k)


def pca_transform(model: PCAModel, v) -> np.ndarray:
    """Project onto the retained components: ``components @ (v - mean)``; accepts 1-D or 2-D input."""
    v = np.asarray(v.values if isinstance(v, FeatureVector) else v, dtype=float)
    if v.shape[-1] != len(model.mean):
        raise ValueError(f"dimension mismatch: model expects {len(model.mean)}, got {v.shape[-1]}")
    return (v - model.mean) @ model.retained.T


# -- decision-level fusion --------------------------------------------------


@dataclass(frozen=True)
class FusionWeights:
    w_v: float
    w_p: float


@dataclass(frozen=True)
class ModalityScore:
    score: float
    quality: float = 1.0

    def __post_init__(self):
        if not (0 <= self.score <= 1 and 0 <= self.quality <= 1):
            raise ValueError("score and quality must lie in [0, 1]")


def fusion_weights(q_v: float, q_p: float) -> FusionWeights:
    """Weights proportional to each modality's signal quality."""
    if not (0 <= q_v <= 1 and 0 <= q_p <= 1):
        raise ValueError("qualities must lie in [0, 1]")
    total = q_v + q_p
    if total == 0:
        raise NoUsableModalityError("no usable modality")
    return FusionWeights(q_v / total, q_p / total)


def fuse_scores(w: FusionWeights, s_v, s_p) -> float:
    sv = s_v.score if isinstance(s_v, ModalityScore) else float(s_v)
    sp = s_p.score if isinstance(s_p, ModalityScore) else float(s_p)
    out = w.w_v * sv + w.w_p * sp
    # keep the convex combination inside [min, max] under rounding
    return float(min(max(out, min(sv, sp)), max(sv, sp)))
