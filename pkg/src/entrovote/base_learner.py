"""Linear softmax base learner and the prediction-matrix file format.

The built-in learner is multinomial logistic regression trained with plain
mini-batch SGD on mean categorical cross-entropy. External classifiers
(e.g. fine-tuned CNNs) plug in through prediction CSVs instead.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadHeader,
    DimensionMismatch,
    DuplicateId,
    EmptyDataset,
    IdMismatch,
    NegativeProbability,
    RowSumOutOfTolerance,
)
from .labels import CLASSES, N_CLASSES, as_label_array

PREDICTION_HEADER = ["id"] + [f"p_{c}" for c in CLASSES]
ROW_SUM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def loss(self) -> str:
        return "categorical_crossentropy"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss
        d["optimizer"] = "sgd"
        return d


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray
    config: Optional[TrainConfig] = None
    loss_history: list = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, feature_dim: int, n_classes: int = N_CLASSES) -> "LinearModel":
        return cls(np.zeros((n_classes, feature_dim)), np.zeros(n_classes))

    def logits(self, features) -> np.ndarray:
        x = _as_features(features)
        if x.shape[1] != self.feature_dim:
            raise DimensionMismatch(f"model expects {self.feature_dim} features, got {x.shape[1]}")
        return x @ self.weights.T + self.bias

    def to_dict(self) -> dict:
        return {
            "kind": "linear_softmax",
            "classes": list(CLASSES),
            "n_classes": int(self.weights.shape[0]),
            "feature_dim": int(self.feature_dim),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "config": self.config.to_dict() if self.config else None,
            "loss_history": [float(v) for v in self.loss_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        cfg = d.get("config")
        if cfg:
            cfg = TrainConfig(**{k: cfg[k] for k in ("epochs", "learning_rate", "batch_size", "seed")})
        weights = np.array(d["weights"], dtype=np.float64).reshape(d["n_classes"], d["feature_dim"])
        return cls(weights, np.array(d["bias"], dtype=np.float64), cfg, list(d.get("loss_history", [])))


@dataclass(eq=False)
class PredictionMatrix:
    """Row-stochastic class probabilities for a list of sample ids."""

    model_id: str
    ids: tuple
    probs: np.ndarray

    def __post_init__(self):
        self.ids = tuple(str(i) for i in self.ids)
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape != (len(self.ids), N_CLASSES):
            raise DimensionMismatch(
                f"expected {len(self.ids)}x{N_CLASSES} probabilities, got {probs.shape}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId(f"duplicate sample ids in {self.model_id!r}")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise NegativeProbability(f"negative or non-finite probability in {self.model_id!r}")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1) > 1e-6):
            raise RowSumOutOfTolerance(f"row sums deviate from 1 in {self.model_id!r}")
        self.probs = probs / sums[:, None]

    def __len__(self):
        return len(self.ids)

    def predicted(self) -> np.ndarray:
        # np.argmax keeps the first maximum, i.e. ties go to the lower class index
        return np.argmax(self.probs, axis=1)

    def reindex(self, ids: Sequence[str]) -> "PredictionMatrix":
        pos = {i: n for n, i in enumerate(self.ids)}
        missing = [i for i in ids if i not in pos]
        if missing:
            raise IdMismatch(f"{self.model_id!r} lacks ids such as {missing[:3]}")
        return PredictionMatrix(self.model_id, tuple(ids), self.probs[[pos[i] for i in ids]])

    def subset(self, ids: Sequence[str]) -> "PredictionMatrix":
        return self.reindex(ids)


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionMismatch(f"features must be 2D, got shape {x.shape}")
    return x


def loss_and_gradient(weights, bias, features, labels):
    """Mean cross-entropy of softmax(X W^T + b) and its gradient w.r.t. (W, b)."""
    x = _as_features(features)
    y = as_label_array(labels)
    n_classes = weights.shape[0]
    probs = softmax(x @ weights.T + bias)
    n = x.shape[0]
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), delta.T @ x, delta.sum(axis=0)[:n_classes]


def train(features, labels, config: TrainConfig = TrainConfig(), n_classes: int = N_CLASSES) -> LinearModel:
    """Fit a zero-initialised linear softmax model with seeded mini-batch SGD.

    Data are reshuffled every epoch from a generator seeded by
    ``config.seed``; the final short batch is used at its actual size.
    ``loss_history`` holds the full-data loss after each epoch.
    """
    x = _as_features(features)
    y = as_label_array(labels)
    if x.shape[0] == 0:
        raise EmptyDataset("no training samples")
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} feature rows but {y.shape[0]} labels")

    model = LinearModel.zeros(x.shape[1], n_classes)
    model.config = config
    rng = np.random.default_rng(config.seed)
    n, bs, lr = x.shape[0], config.batch_size, config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            _, g_w, g_b = loss_and_gradient(model.weights, model.bias, x[idx], y[idx])
            model.weights -= lr * g_w
            model.bias -= lr * g_b
        model.loss_history.append(loss_and_gradient(model.weights, model.bias, x, y)[0])
    return model


def predict_proba(model: LinearModel, features, ids=None, model_id: str = "linear") -> PredictionMatrix:
    probs = softmax(model.logits(features))
    if ids is None:
        ids = [str(i) for i in range(probs.shape[0])]
    return PredictionMatrix(model_id, tuple(ids), probs)


def save_model(model: LinearModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> LinearModel:
    return LinearModel.from_dict(json.loads(Path(path).read_text()))


def fmt(value: float) -> str:
    """Fixed 6-significant-digit rendering used by every CSV/JSON writer."""
    return f"{float(value):.6g}"


def write_predictions(pred: PredictionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for sid, row in zip(pred.ids, pred.probs):
            w.writerow([sid, *(fmt(p) for p in row)])


def load_predictions(path, model_id: Optional[str] = None) -> PredictionMatrix:
    """Read an ``id,p_AD,p_MCI,p_CN`` CSV.

    Rows within 1e-3 of summing to one are renormalised; anything further
    off is rejected.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != PREDICTION_HEADER:
        raise BadHeader(f"{path}: expected header {','.join(PREDICTION_HEADER)}")
    ids, probs, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(PREDICTION_HEADER):
            raise BadHeader(f"{path}:{lineno}: expected {len(PREDICTION_HEADER)} columns")
        sid = row[0].strip()
        if sid in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate id {sid!r}")
        seen.add(sid)
        p = np.array([float(v) for v in row[1:]])
        if np.any(~np.isfinite(p)) or np.any(p < 0):
            raise NegativeProbability(f"{path}:{lineno}: negative probability for {sid!r}")
        s = p.sum()
        if abs(s - 1.0) > ROW_SUM_TOLERANCE:
            raise RowSumOutOfTolerance(f"{path}:{lineno}: row for {sid!r} sums to {s:.6g}")
        ids.append(sid)
        probs.append(p / s)
    return PredictionMatrix(model_id or path.stem, tuple(ids), np.array(probs).reshape(-1, N_CLASSES))
