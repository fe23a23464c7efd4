"""Reference classifiers (logistic, one-hidden-layer tanh network), training and alarm logic."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .evaluation import classification_metrics, confusion
from .fusion import FeatureMatrix, fit_scaler

LOGISTIC = "LOGISTIC"
MLP = "MLP"


class TrainingError(ValueError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    l2: float = 1e-4
    hidden_units: int = 16
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "hidden_units", "max_epochs", "patience", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


@dataclass
class ClassifierModel:
    kind: str
    params: dict[str, np.ndarray]
    input_dim: int
    l2: float = 0.0
    seed: int = 0
    epochs_run: int = 0
    best_val_loss: float = float("nan")
    val_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "l2": self.l2,
            "params": {k: np.asarray(v).tolist() for k, v in sorted(self.params.items())},
            "seed": self.seed,
            "epochs_run": self.epochs_run,
            "best_val_loss": self.best_val_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        return cls(
            kind=d["kind"],
            params={k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
            input_dim=int(d["input_dim"]),
            l2=float(d["l2"]),
            seed=int(d["seed"]),
            epochs_run=int(d["epochs_run"]),
            best_val_loss=float(d["best_val_loss"]),
        )


# -- forward / backward -----------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(kind: str, d: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    def glorot(fan_in, fan_out, shape):
        r = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=shape)

    if kind == LOGISTIC:
        return {"w": glorot(d, 1, (d,)), "b": np.zeros(1)}
    if kind == MLP:
        return {
            "W1": glorot(d, hidden, (d, hidden)),
            "b1": np.zeros(hidden),
            "w2": glorot(hidden, 1, (hidden,)),
            "b2": np.zeros(1),
        }
    raise ValueError(f"unknown model kind {kind!r}")


def logits(kind: str, params: dict, X: np.ndarray) -> np.ndarray:
    if kind == LOGISTIC:
        return X @ params["w"] + params["b"][0]
    h = np.tanh(X @ params["W1"] + params["b1"])
    return h @ params["w2"] + params["b2"][0]


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y z, stable
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss(kind: str, params: dict, X: np.ndarray, y: np.ndarray, l2: float = 0.0) -> float:
    """Mean cross-entropy plus (l2 / 2) * squared norm of the weight matrices."""
    z = logits(kind, params, X)
    reg = sum(float(np.sum(v**2)) for k, v in params.items() if not k.startswith("b"))
    return _bce_from_logits(z, y) + 0.5 * l2 * reg


def loss_and_grad(kind: str, params: dict, X: np.ndarray, y: np.ndarray, l2: float = 0.0):
    n = len(y)
    if kind == LOGISTIC:
        z = X @ params["w"] + params["b"][0]
        dz = (sigmoid(z) - y) / n
        grads = {"w": X.T @ dz + l2 * params["w"], "b": np.array([dz.sum()])}
    else:
        a = X @ params["W1"] + params["b1"]
        h = np.tanh(a)
        z = h @ params["w2"] + params["b2"][0]
        dz = (sigmoid(z) - y) / n
        dh = np.outer(dz, params["w2"]) * (1.0 - h**2)
        grads = {
            "W1": X.T @ dh + l2 * params["W1"],
            "b1": dh.sum(axis=0),
            "w2": h.T @ dz + l2 * params["w2"],
            "b2": np.array([dz.sum()]),
        }
    reg = sum(float(np.sum(v**2)) for k, v in params.items() if not k.startswith("b"))
    return _bce_from_logits(z, y) + 0.5 * l2 * reg, grads


# -- training ---------------------------------------------------------------


def _xy(m) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, FeatureMatrix):
        return m.X, m.y.astype(float)
    X, y = m
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def train_classifier(kind: str, train, val, cfg: TrainConfig | None = None) -> ClassifierModel:
    """Mini-batch gradient descent on L2-regularised cross-entropy.

    The learning rate halves after ``patience // 2`` epochs without a
    validation improvement; training stops after ``patience`` such epochs
    and the best-validation snapshot is returned.
    """
    cfg = cfg or TrainConfig()
    X, y = _xy(train)
    Xv, yv = _xy(val)
    if len(np.unique(y)) < 2:
        raise TrainingError("training labels contain a single class")
    if Xv.shape[1] != X.shape[1]:
        raise TrainingError("train/validation dimension mismatch")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(kind, X.shape[1], cfg.hidden_units, rng)
    lr = cfg.learning_rate
    best_loss, best_params = math.inf, copy.deepcopy(params)
    history: list[float] = []
    stale = stale_lr = 0
    n = len(y)
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_loss, grads = loss_and_grad(kind, params, X[idx], y[idx], cfg.l2)
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            for k in params:
                params[k] = params[k] - lr * grads[k]
        v = loss(kind, params, Xv, yv)
        if not math.isfinite(v):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        if v < best_loss:
            best_loss, best_params = v, copy.deepcopy(params)
            history.append(v)
            stale = stale_lr = 0
        else:
            stale += 1
            stale_lr += 1
            if stale_lr >= max(1, cfg.patience // 2):
                lr *= 0.5
                stale_lr = 0
            if stale >= cfg.patience:
                break
    return ClassifierModel(
        kind=kind,
        params=best_params,
        input_dim=X.shape[1],
        l2=cfg.l2,
        seed=cfg.seed,
        epochs_run=epoch,
        best_val_loss=best_loss,
        val_history=history,
    )


def predict_score(model: ClassifierModel, v) -> float | np.ndarray:
    """Sigmoid output; a 1-D input gives a float, a 2-D batch an array."""
    x = np.asarray(v, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"dimension mismatch: model expects {model.input_dim}, got {x.shape[-1]}")
    p = sigmoid(np.atleast_1d(logits(model.kind, model.params, np.atleast_2d(x))))
    return float(p[0]) if x.ndim == 1 else p


def gradient_check(model: ClassifierModel, batch, eps: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative error between backprop and central differences over every weight.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    X, y = _xy(batch)
    params = {k: v.astype(float).copy() for k, v in model.params.items()}
    _, grads = loss_and_grad(model.kind, params, X, y, model.l2)
    worst = 0.0
    for k, w in params.items():
        flat = w.reshape(-1)
        g = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss(model.kind, params, X, y, model.l2)
            flat[i] = orig - eps
            lm = loss(model.kind, params, X, y, model.l2)
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            err = abs(g[i] - num) / max(abs(g[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


# -- model selection --------------------------------------------------------


def subject_folds(groups: np.ndarray, k: int, seed: int = 0) -> list[np.ndarray]:
    """Fold index per row; subjects shuffled by ``seed`` and dealt round-robin."""
    subjects = sorted(set(np.asarray(groups).tolist()))
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(subjects) < k:
        raise ValueError(f"fewer subjects ({len(subjects)}) than folds ({k})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(subjects))
    fold_of = {subjects[j]: i % k for i, j in enumerate(perm)}
    assignment = np.array([fold_of[g] for g in np.asarray(groups).tolist()])
    return [np.flatnonzero(assignment == f) for f in range(k)]


def cross_validate(data: FeatureMatrix, k: int = 5, cfg: TrainConfig | None = None, kind: str = MLP) -> dict:
    """Subject-grouped k-fold CV; each fold standardises on its own training rows.

    The held-out fold drives early stopping and is scored at threshold 0.5.
    """
    cfg = cfg or TrainConfig()
    folds = subject_folds(data.groups, k, cfg.seed)
    per_fold = []
    for f, val_idx in enumerate(folds):
        mask = np.ones(len(data), dtype=bool)
        mask[val_idx] = False
        tr, va = data.rows(mask), data.rows(~mask)
        scaler = fit_scaler(tr)
        tr_s, va_s = scaler.transform(tr), scaler.transform(va)
        model = train_classifier(kind, tr_s, va_s, cfg)
        p = predict_score(model, va_s.X)
        rep = classification_metrics(confusion((p > 0.5).astype(int), va_s.y))
        per_fold.append(
            {
                "fold": f,
                "subjects": sorted(set(va.groups.tolist())),
                "n": int(len(va)),
                "accuracy": rep.accuracy,
                "f1": rep.f1,
            }
        )
    acc = np.array([r["accuracy"] for r in per_fold])
    f1 = np.array([0.0 if r["f1"] is None else r["f1"] for r in per_fold])
    return {
        "folds": per_fold,
        "mean_accuracy": float(acc.mean()),
        "std_accuracy": float(acc.std(ddof=1)) if k > 1 else 0.0,
        "mean_f1": float(f1.mean()),
        "std_f1": float(f1.std(ddof=1)) if k > 1 else 0.0,
    }


LOG_UNIFORM = ("learning_rate", "l2")
INTEGER = ("hidden_units", "max_epochs", "patience", "batch_size")


def sample_config(space: dict, rng: np.random.Generator, base: TrainConfig) -> TrainConfig:
    values = {}
    for name in sorted(space):
        lo, hi = space[name]
        if name in LOG_UNIFORM:
            values[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        elif name in INTEGER:
            values[name] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            raise ValueError(f"unsupported search parameter {name!r}")
    return replace(base, **values)


def random_search(
    space: dict,
    budget: int,
    data: FeatureMatrix,
    seed: int = 0,
    k: int = 5,
    base: TrainConfig | None = None,
    kind: str = MLP,
) -> tuple[TrainConfig, list[dict]]:
    """Seeded random search; the winner maximises mean CV F1 (earliest trial on ties).

    Trial ``i`` trains with seed ``seed + i``.
    """
    if not space:
        raise ValueError("empty search space")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    base = base or TrainConfig()
    rng = np.random.default_rng(seed)
    ledger = []
    best_i, best_f1 = 0, -math.inf
    for i in range(budget):
        cfg = replace(sample_config(space, rng, base), seed=seed + i)
        cv = cross_validate(data, k, cfg, kind)
        ledger.append({"trial": i, "config": asdict(cfg), "mean_f1": cv["mean_f1"], "mean_accuracy": cv["mean_accuracy"]})
        if cv["mean_f1"] > best_f1:
            best_i, best_f1 = i, cv["mean_f1"]
    return TrainConfig(**ledger[best_i]["config"]), ledger


# -- temporal smoothing -----------------------------------------------------


@dataclass(frozen=True)
class AlarmEvent:
    index: int
    score: float


class AlarmTracker:
    """Incremental EMA with a consecutive-exceedance alarm that re-arms below threshold."""

    def __init__(self, alpha: float = 0.3, threshold: float = 0.5, consecutive: int = 3):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if consecutive < 1:
            raise ValueError("consecutive must be >= 1")
        self.alpha, self.threshold, self.consecutive = alpha, threshold, consecutive
        self.ema: float | None = None
        self.run = 0
        self.armed = True
        self.index = -1

    def update(self, score: float) -> AlarmEvent | None:
        self.index += 1
        self.ema = score if self.ema is None else self.alpha * score + (1 - self.alpha) * self.ema
        if self.ema > self.threshold:
            self.run += 1
            if self.armed and self.run >= self.consecutive:
                self.armed = False
                return AlarmEvent(self.index, self.ema)
        else:
            self.run = 0
            if self.ema < self.threshold:
                self.armed = True
        return None


def ema(scores: Sequence[float], alpha: float) -> np.ndarray:
    out = np.empty(len(scores))
    for i, s in enumerate(scores):
        out[i] = s if i == 0 else alpha * s + (1 - alpha) * out[i - 1]
    return out


def smooth_and_alarm(scores: Sequence[float], alpha: float = 0.3, threshold: float = 0.5, consecutive: int = 3) -> list[AlarmEvent]:
    if len(scores) == 0:
        raise ValueError("empty score series")
    tracker = AlarmTracker(alpha, threshold, consecutive)
    return [ev for s in scores if (ev := tracker.update(float(s))) is not None]
