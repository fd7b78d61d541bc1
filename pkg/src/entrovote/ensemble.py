"""Top-k model selection, perceptron stacking and majority voting."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .base_learner import (
    LinearModel,
    PredictionMatrix,
    TrainConfig,
    loss_and_gradient,
    softmax,
    train,
)
from .errors import DimensionMismatch, EmptyScan, IdMismatch, KTooLarge
from .labels import CN, N_CLASSES, label_name

VOTE_HEADER = ["id", "vote_1", "vote_2", "vote_3", "decision", "tie"]


def select_top_k_models(recalls: Mapping[str, float], k: int = 3) -> list:
    """Model ids by descending macro recall, ties by id; first ``k``."""
    if k > len(recalls):
        raise KTooLarge(f"asked for {k} models but only {len(recalls)} reported")
    ranked = sorted(recalls, key=lambda mid: (-recalls[mid], mid))
    return ranked[:k]


def _aligned(bases: Sequence[PredictionMatrix]) -> tuple:
    if not bases:
        raise IdMismatch("no base predictions given")
    ids = bases[0].ids
    for b in bases[1:]:
        if b.ids != ids:
            if set(b.ids) != set(ids) or len(b.ids) != len(ids):
                raise IdMismatch(f"{b.model_id!r} and {bases[0].model_id!r} cover different ids")
            raise IdMismatch(f"{b.model_id!r} orders ids differently from {bases[0].model_id!r}")
    return ids


@dataclass
class StackingModel:
    weights: np.ndarray  # C x (M*C)
    bias: np.ndarray
    base_order: tuple
    loss_history: list = None

    def to_dict(self) -> dict:
        return {
            "kind": "stacking_perceptron",
            "base_order": list(self.base_order),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "loss_history": [float(v) for v in (self.loss_history or [])],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StackingModel":
        return cls(
            np.array(d["weights"], dtype=np.float64),
            np.array(d["bias"], dtype=np.float64),
            tuple(d["base_order"]),
            list(d.get("loss_history", [])),
        )


def stack_features(bases: Sequence[PredictionMatrix], base_order=None) -> tuple:
    """Concatenate the base probability rows in ``base_order`` (default: given order)."""
    by_id = {b.model_id: b for b in bases}
    if len(by_id) != len(bases):
        raise IdMismatch("base model ids must be distinct")
    if base_order is None:
        base_order = tuple(b.model_id for b in bases)
    missing = [m for m in base_order if m not in by_id]
    if missing or len(base_order) != len(bases):
        raise IdMismatch(f"base models {sorted(by_id)} do not match base_order {list(base_order)}")
    ordered = [by_id[m] for m in base_order]
    ids = _aligned(ordered)
    return ids, np.hstack([b.probs for b in ordered]), tuple(base_order)


def stack_loss_and_gradient(model: StackingModel, bases, labels):
    _, x, _ = stack_features(bases, model.base_order)
    return loss_and_gradient(model.weights, model.bias, x, labels)


def stack_train(bases: Sequence[PredictionMatrix], labels, config: TrainConfig = TrainConfig()) -> StackingModel:
    """Single affine layer + softmax over the concatenated base outputs."""
    ids, x, order = stack_features(bases)
    if len(labels) != len(ids):
        raise DimensionMismatch(f"{len(ids)} samples but {len(labels)} labels")
    fitted: LinearModel = train(x, labels, config)
    return StackingModel(fitted.weights, fitted.bias, order, fitted.loss_history)


def stack_predict(model: StackingModel, bases: Sequence[PredictionMatrix], model_id: str = "stacking") -> PredictionMatrix:
    ids, x, _ = stack_features(bases, model.base_order)
    if x.shape[1] != model.weights.shape[1]:
        raise DimensionMismatch(f"stacker expects {model.weights.shape[1]} inputs, got {x.shape[1]}")
    return PredictionMatrix(model_id, ids, softmax(x @ model.weights.T + model.bias))


def save_stacking_model(model: StackingModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_stacking_model(path) -> StackingModel:
    return StackingModel.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class VoteResult:
    id: str
    votes: tuple
    decision: int
    tie: bool


def vote_decision(votes) -> tuple:
    """Mode of the votes; when no class repeats, fall back to CN and flag a tie."""
    counts = Counter(int(v) for v in votes)
    best = max(counts.values())
    if best == 1 and len(counts) > 1:
        return CN, True
    winners = sorted(c for c, n in counts.items() if n == best)
    return winners[0], False


def majority_vote(bases: Sequence[PredictionMatrix]) -> list:
    ids = _aligned(bases)
    votes = np.stack([b.predicted() for b in bases], axis=1)
    results = []
    for sid, row in zip(ids, votes):
        decision, tie = vote_decision(row)
        results.append(VoteResult(sid, tuple(int(v) for v in row), decision, tie))
    return results


def tie_fraction(results: Sequence[VoteResult]) -> float:
    return sum(r.tie for r in results) / len(results) if results else 0.0


def mean_scores(bases: Sequence[PredictionMatrix], model_id: str = "majority_vote") -> PredictionMatrix:
    """Averaged softmax rows; used as the voting ensemble's ROC scores."""
    ids = _aligned(bases)
    return PredictionMatrix(model_id, ids, np.mean([b.probs for b in bases], axis=0))


def write_votes(results: Sequence[VoteResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VOTE_HEADER)
        for r in results:
            w.writerow([r.id, *(label_name(v) for v in r.votes), label_name(r.decision), int(r.tie)])


def aggregate_scan(slice_preds: PredictionMatrix) -> np.ndarray:
    """Mean of a scan's slice probability rows, renormalised."""
    if len(slice_preds) == 0:
        raise EmptyScan(f"no slices for {slice_preds.model_id!r}")
    row = slice_preds.probs.mean(axis=0)
    return row / row.sum()


def scan_of(sample_id: str) -> str:
    return sample_id.split(":", 1)[0]


def aggregate_by_scan(preds: PredictionMatrix) -> PredictionMatrix:
    """Roll slice-level rows (ids ``scan:slice``) up to one row per scan."""
    groups: dict = {}
    for n, sid in enumerate(preds.ids):
        groups.setdefault(scan_of(sid), []).append(n)
    scans = sorted(groups)
    rows = [
        aggregate_scan(PredictionMatrix(preds.model_id, [preds.ids[i] for i in groups[s]], preds.probs[groups[s]]))
        for s in scans
    ]
    return PredictionMatrix(preds.model_id, scans, np.array(rows).reshape(-1, N_CLASSES))
