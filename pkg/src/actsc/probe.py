"""Linear difficulty probe over selected neuron activations.

Pipeline: binarize difficulty labels (easy vs hard, intermediates dropped),
slice the selected neurons out of each activation vector, z-score per
feature with statistics frozen from the training set, then fit a logistic
model by deterministic full-batch gradient descent from zero init. The
objective is convex, so zero init removes any seed dependence and repeated
training is bit-identical.

The loss is mean binary cross-entropy, computed from logits via
``softplus(z) - y*z`` so it stays finite for any finite parameters, plus an
optional ``l2/2 * |w|^2`` ridge term (bias excluded).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .activation_store import ActivationRecord
from .dsn import DsnSelection
from .errors import ConfigError, ProbeTrainingError

STD_FLOOR = 1e-8

_P_LO = np.finfo(np.float64).tiny
_P_HI = 1.0 - np.finfo(np.float64).epsneg  # largest double < 1


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score statistics; std is floored so dead neurons map to 0."""

    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 0.0
    convergence_tol: float = 1e-7

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")


@dataclass(frozen=True)
class TrainMeta:
    final_loss: float
    epochs_run: int


@dataclass(frozen=True)
class ProbeTrainingSet:
    """Raw (un-normalized) feature rows with binary labels."""

    features: np.ndarray  # N x |union_set|
    labels: np.ndarray    # N, values in {0, 1}
    dsn: DsnSelection

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("feature row count != label count")
        if self.features.shape[1] != len(self.dsn.union_set):
            raise ConfigError("feature column count != |union_set|")
        if not np.isin(self.labels, (0, 1)).all():
            raise ConfigError("labels must be 0/1")


@dataclass(frozen=True)
class ProbeModel:
    weights: np.ndarray
    bias: float
    normalizer: Normalizer
    dsn: DsnSelection
    train_meta: TrainMeta


def make_labels(
    records: Sequence[ActivationRecord],
    theta_easy: int = 1,
    theta_hard: int = 5,
) -> tuple[list[ActivationRecord], np.ndarray]:
    """Binarize difficulties: d <= theta_easy -> 0, d >= theta_hard -> 1.

    Intermediate difficulties are dropped. Input order is preserved for the
    kept records. Raises if fewer than two records survive or only one
    class is present.
    """
    kept: list[ActivationRecord] = []
    labels: list[int] = []
    for rec in records:
        if rec.difficulty is None:
            raise ProbeTrainingError(f"record '{rec.problem_id}' has no difficulty label")
        if rec.difficulty <= theta_easy:
            kept.append(rec)
            labels.append(0)
        elif rec.difficulty >= theta_hard:
            kept.append(rec)
            labels.append(1)
    y = np.asarray(labels, dtype=np.float64)
    if len(kept) < 2 or len(set(labels)) < 2:
        raise ProbeTrainingError(
            f"label construction kept {len(kept)} records with classes {sorted(set(labels))}; "
            "need at least one easy and one hard record"
        )
    return kept, y


def extract_features(records: Sequence[ActivationRecord], dsn: DsnSelection) -> np.ndarray:
    """Slice each record's activations at the union-set indices (sorted order)."""
    idx = np.asarray(dsn.union_set, dtype=np.int64)
    for rec in records:
        if idx.size and idx.max() >= rec.activations.shape[0]:
            raise ConfigError(
                f"neuron index {int(idx.max())} out of range for record "
                f"'{rec.problem_id}' with {rec.activations.shape[0]} activations"
            )
    matrix = np.stack([rec.activations for rec in records]).astype(np.float64)
    return matrix[:, idx]


def build_training_set(
    records: Sequence[ActivationRecord],
    dsn: DsnSelection,
    theta_easy: int = 1,
    theta_hard: int = 5,
) -> ProbeTrainingSet:
    kept, labels = make_labels(records, theta_easy, theta_hard)
    return ProbeTrainingSet(features=extract_features(kept, dsn), labels=labels, dsn=dsn)


def fit_normalizer(features: np.ndarray) -> Normalizer:
    """Per-column mean and population std, floored at 1e-8."""
    if features.ndim != 2 or features.shape[0] < 1:
        raise ConfigError("fit_normalizer needs a non-empty 2-D feature matrix")
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


def apply_normalizer(normalizer: Normalizer, features: np.ndarray) -> np.ndarray:
    if features.shape[-1] != normalizer.mean.shape[0]:
        raise ConfigError(
            f"feature width {features.shape[-1]} != normalizer width {normalizer.mean.shape[0]}"
        )
    return (features - normalizer.mean) / normalizer.std


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss_and_grad(
    weights: np.ndarray,
    bias: float,
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 0.0,
) -> tuple[float, np.ndarray, float]:
    """Mean BCE (+ ridge) with its analytic gradient in (weights, bias)."""
    with np.errstate(over="ignore", invalid="ignore"):  # saturation handled by the finiteness check
        z = features @ weights + bias
        # softplus(z) - y*z == -[y*log(p) + (1-y)*log(1-p)], stable for any z
        loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
        if l2:
            loss += 0.5 * l2 * float(weights @ weights)
        resid = _sigmoid(z) - labels
        grad_w = features.T @ resid / features.shape[0]
        if l2:
            grad_w = grad_w + l2 * weights
        grad_b = float(resid.mean())
    return loss, grad_w, grad_b


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> tuple[np.ndarray, float, list[float]]:
    """Full-batch gradient descent from zero init.

    Returns (weights, bias, losses) where losses[0] is the loss at the zero
    model and losses[e] the loss after the e-th update. Stops early once the
    per-epoch loss delta drops below convergence_tol.
    """
    if set(np.unique(labels)) != {0.0, 1.0}:
        raise ProbeTrainingError("training labels must contain both classes 0 and 1")
    w = np.zeros(features.shape[1], dtype=np.float64)
    b = 0.0
    loss, gw, gb = bce_loss_and_grad(w, b, features, labels, config.l2)
    losses = [loss]
    for epoch in range(1, config.epochs + 1):
        w = w - config.learning_rate * gw
        b = b - config.learning_rate * gb
        loss, gw, gb = bce_loss_and_grad(w, b, features, labels, config.l2)
        if not np.isfinite(loss):
            raise ProbeTrainingError(f"training diverged: non-finite loss at epoch {epoch}")
        losses.append(loss)
        if abs(losses[-2] - losses[-1]) < config.convergence_tol:
            break
    return w, b, losses


def train_probe(training_set: ProbeTrainingSet, config: TrainConfig | None = None) -> ProbeModel:
    """Fit the normalizer on the training features, then the logistic probe."""
    config = config or TrainConfig()
    normalizer = fit_normalizer(training_set.features)
    normalized = apply_normalizer(normalizer, training_set.features)
    weights, bias, losses = fit_logistic(normalized, training_set.labels, config)
    return ProbeModel(
        weights=weights,
        bias=bias,
        normalizer=normalizer,
        dsn=training_set.dsn,
        train_meta=TrainMeta(final_loss=losses[-1], epochs_run=len(losses) - 1),
    )


def _features_one(model: ProbeModel, activations: np.ndarray) -> np.ndarray:
    arr = np.asarray(activations, dtype=np.float64)
    idx = np.asarray(model.dsn.union_set, dtype=np.int64)
    if idx.size and idx.max() >= arr.shape[0]:
        raise ConfigError(
            f"neuron index {int(idx.max())} out of range for a {arr.shape[0]}-activation vector"
        )
    if not np.all(np.isfinite(arr)):
        raise ConfigError("non-finite activation value")
    return (arr[idx] - model.normalizer.mean) / model.normalizer.std


def predict_logit(model: ProbeModel, activations: np.ndarray) -> float:
    """Pre-sigmoid score of the hard class for one activation vector."""
    return float(model.weights @ _features_one(model, activations) + model.bias)


def predict_p_hard(model: ProbeModel, activations: np.ndarray) -> float:
    """P(hard) for one activation vector, clamped strictly inside (0, 1)."""
    z = predict_logit(model, activations)
    p = float(_sigmoid(np.asarray([z]))[0])
    return float(min(max(p, _P_LO), _P_HI))


def predict_logits(model: ProbeModel, records: Sequence[ActivationRecord]) -> np.ndarray:
    """Logits for many records in input order."""
    return np.asarray([predict_logit(model, rec.activations) for rec in records])


@dataclass(frozen=True)
class ProbeEvaluation:
    accuracy: float
    mean_bce: float
    logits: np.ndarray


def evaluate_probe(
    model: ProbeModel,
    records: Sequence[ActivationRecord],
    labels: np.ndarray,
) -> ProbeEvaluation:
    """Accuracy (predicted hard iff P >= 0.5) and mean BCE against 0/1 labels."""
    if len(records) == 0:
        raise ProbeTrainingError("evaluate_probe needs at least one record")
    if len(records) != len(labels):
        raise ConfigError("records and labels length mismatch")
    y = np.asarray(labels, dtype=np.float64)
    z = predict_logits(model, records)
    predicted_hard = z >= 0.0  # P >= 0.5 in logit space
    accuracy = float((predicted_hard == (y == 1.0)).mean())
    mean_bce = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return ProbeEvaluation(accuracy=accuracy, mean_bce=mean_bce, logits=z)


def save_probe(
    model: ProbeModel,
    path: str | Path,
    config: TrainConfig | None = None,
    theta_easy: int = 1,
    theta_hard: int = 5,
) -> None:
    """Persist the probe with its selection and the training config echo."""
    doc = {
        "weights": [float(v) for v in model.weights],
        "bias": model.bias,
        "normalizer": {
            "mean": [float(v) for v in model.normalizer.mean],
            "std": [float(v) for v in model.normalizer.std],
        },
        "dsn": {
            "easy_set": list(model.dsn.easy_set),
            "hard_set": list(model.dsn.hard_set),
            "union_set": list(model.dsn.union_set),
            "gaps_easy": [float(g) for g in model.dsn.gaps_easy],
            "gaps_hard": [float(g) for g in model.dsn.gaps_hard],
        },
        "train_meta": {
            "final_loss": model.train_meta.final_loss,
            "epochs_run": model.train_meta.epochs_run,
        },
        "config": {
            "learning_rate": (config or TrainConfig()).learning_rate,
            "epochs": (config or TrainConfig()).epochs,
            "l2": (config or TrainConfig()).l2,
            "convergence_tol": (config or TrainConfig()).convergence_tol,
            "theta_easy": theta_easy,
            "theta_hard": theta_hard,
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_probe(path: str | Path) -> tuple[ProbeModel, dict]:
    """Load a probe file; returns the model and the raw config echo."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    dsn = DsnSelection(
        easy_set=tuple(doc["dsn"]["easy_set"]),
        hard_set=tuple(doc["dsn"]["hard_set"]),
        union_set=tuple(doc["dsn"]["union_set"]),
        gaps_easy=np.asarray(doc["dsn"]["gaps_easy"], dtype=np.float64),
        gaps_hard=np.asarray(doc["dsn"]["gaps_hard"], dtype=np.float64),
    )
    model = ProbeModel(
        weights=np.asarray(doc["weights"], dtype=np.float64),
        bias=float(doc["bias"]),
        normalizer=Normalizer(
            mean=np.asarray(doc["normalizer"]["mean"], dtype=np.float64),
            std=np.asarray(doc["normalizer"]["std"], dtype=np.float64),
        ),
        dsn=dsn,
        train_meta=TrainMeta(
            final_loss=float(doc["train_meta"]["final_loss"]),
            epochs_run=int(doc["train_meta"]["epochs_run"]),
        ),
    )
    if not (np.all(np.isfinite(model.weights)) and np.isfinite(model.bias)):
        raise ProbeTrainingError(f"probe file {path} contains non-finite parameters")
    return model, doc.get("config", {})
