"""Selection functions: the MaxProb passthrough and a trainable two-layer MLP.

The MLP maps a record's feature vector to a correctness score in (0, 1):
sigmoid(W2 . relu(W1 x + b1) + b2), trained with mean-squared error against
accuracy targets in [0, 1]. Only the score's ordering matters downstream, so
the bounded output is a convenience, not a calibration claim.

Training is plain seeded Adam with global-norm gradient clipping, inverted
dropout on the hidden layer, and early stopping on the validation
risk-coverage AUC (lower is better). Identical config, seed and data give
bitwise-identical parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .metrics import ScoredRecord, rc_auc
from .optim import AdamState, adam_step, clip_global_norm
from .records import PredictionRecord, RecordSet

__all__ = [
    "TrainConfig",
    "MaxProbSelector",
    "MlpSelector",
    "TrainingDiverged",
    "maxprob_score",
    "mlp_forward",
    "loss_and_grad",
    "train_selector",
    "score_all",
    "save_selector",
    "load_selector",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss goes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gradient_clip_norm: float = 1.0
    dropout_rate: float = 0.1
    early_stop_metric: str = "val_rc_auc"
    patience: int = 5
    seed: int = 0
    hidden_dim: int = 64

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.gradient_clip_norm <= 0:
            raise ValueError("gradient_clip_norm must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.early_stop_metric != "val_rc_auc":
            raise ValueError("early stopping is defined on validation RC-AUC only")


@dataclass(frozen=True)
class MaxProbSelector:
    """Scores a record with the base model's own confidence, unchanged."""

    variant: str = "maxprob"

    def score(self, record: PredictionRecord) -> float:
        return maxprob_score(record)

    def score_matrix(self, features: np.ndarray, confidences: np.ndarray) -> np.ndarray:
        return np.asarray(confidences, dtype=np.float64)


@dataclass
class MlpSelector:
    """Two-layer MLP correctness scorer. Shapes: W1 (d_h, d_in), b1 (d_h,),
    W2 (d_h,), b2 scalar."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    dropout_rate: float = 0.1
    variant: str = "mlp"
    train_config: TrainConfig | None = None
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = float(self.b2)
        d_h, d_in = self.W1.shape
        if self.b1.shape != (d_h,) or self.W2.shape != (d_h,):
            raise ValueError("inconsistent MLP parameter shapes")
        for arr in (self.W1, self.b1, self.W2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite MLP parameter")
        if not math.isfinite(self.b2):
            raise ValueError("non-finite MLP parameter")

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, d_in: int, d_hidden: int, dropout_rate: float,
             rng: np.random.Generator, output_bias: float = 0.0) -> "MlpSelector":
        # He-style scaling for the relu layer, small dense head; the output
        # bias can start at the target base rate so the sigmoid does not
        # begin saturated
        W1 = rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_hidden, d_in))
        W2 = rng.normal(0.0, 1.0 / math.sqrt(d_hidden), size=d_hidden)
        return cls(W1=W1, b1=np.zeros(d_hidden), W2=W2, b2=float(output_bias),
                   dropout_rate=dropout_rate)

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, np.array([self.b2])]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.W1, self.b1, self.W2 = params[0], params[1], params[2]
        self.b2 = float(params[3][0])

    def score(self, record: PredictionRecord) -> float:
        return float(mlp_forward(self, record.features))

    def score_matrix(self, features: np.ndarray, confidences: np.ndarray) -> np.ndarray:
        return _forward_batch(self, np.asarray(features, dtype=np.float64))[1]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def maxprob_score(record: PredictionRecord) -> float:
    return float(record.confidence)


def _forward_batch(
    model: MlpSelector,
    x: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
):
    """Returns (hidden post-dropout, outputs). x has shape (n, d_in)."""
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ValueError(
            f"feature dimension mismatch: got {x.shape[1] if x.ndim == 2 else x.shape}, "
            f"model expects {model.d_in}"
        )
    pre = x @ model.W1.T + model.b1
    hidden = np.maximum(pre, 0.0)
    if train_mode and model.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(hidden.shape) < keep) / keep  # inverted dropout
        hidden = hidden * mask
    z = hidden @ model.W2 + model.b2
    # keep scores strictly inside (0, 1) even where float sigmoid saturates
    out = np.clip(_sigmoid(z), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return hidden, out


def mlp_forward(
    model: MlpSelector,
    features: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Score a single feature vector; deterministic in eval mode."""
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    return float(_forward_batch(model, x, train_mode, rng)[1][0])


def loss_and_grad(
    model: MlpSelector,
    features: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
):
    """Mean squared error against accuracy targets, with gradients for
    [W1, b1, W2, b2] from backpropagation."""
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("targets must lie in [0, 1]")

    pre = x @ model.W1.T + model.b1
    hidden = np.maximum(pre, 0.0)
    if train_mode and model.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode loss needs an rng for dropout")
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(hidden.shape) < keep) / keep
        dropped = hidden * mask
    else:
        mask = None
        dropped = hidden
    z = dropped @ model.W2 + model.b2
    p = _sigmoid(z)

    n = x.shape[0]
    loss = float(np.mean((p - t) ** 2))
    dz = 2.0 * (p - t) * p * (1.0 - p) / n
    gW2 = dropped.T @ dz
    gb2 = float(dz.sum())
    dhid = np.outer(dz, model.W2)
    if mask is not None:
        dhid = dhid * mask
    dpre = dhid * (pre > 0.0)
    gW1 = dpre.T @ x
    gb1 = dpre.sum(axis=0)
    return loss, [gW1, gb1, gW2, np.array([gb2])]


def _val_rc_auc(model: MlpSelector, val_features: np.ndarray,
                val_scored_template: Sequence[ScoredRecord]) -> float:
    scores = _forward_batch(model, val_features)[1]
    rescored = [
        ScoredRecord(record=s.record, score=float(sc))
        for s, sc in zip(val_scored_template, scores)
    ]
    return rc_auc(rescored)


def train_selector(
    train_records: RecordSet,
    val_records: RecordSet,
    config: TrainConfig,
) -> MlpSelector:
    """Train the MLP scorer on (features -> accuracy) regression.

    Adam with global-norm clipping; after each epoch the current model scores
    the validation set and the parameters with the best (lowest) validation
    RC-AUC are kept. Stops early after ``patience`` epochs without
    improvement. Raises TrainingDiverged (with the epoch) on non-finite loss.
    """
    if len(train_records) == 0 or len(val_records) == 0:
        raise ValueError("train and validation sets must be nonempty")
    if train_records.dim != val_records.dim:
        raise ValueError(
            f"feature dimension mismatch: train {train_records.dim}, "
            f"val {val_records.dim}"
        )

    x = train_records.features_matrix()
    t = train_records.accuracies()
    val_x = val_records.features_matrix()
    val_template = [
        ScoredRecord(record=r, score=0.0) for r in val_records
    ]

    rng = np.random.default_rng(config.seed)
    base_rate = float(np.clip(t.mean(), 1e-3, 1 - 1e-3))
    model = MlpSelector.init(
        x.shape[1], config.hidden_dim, config.dropout_rate, rng,
        output_bias=math.log(base_rate / (1.0 - base_rate)),
    )
    state = AdamState(model.params())

    n = x.shape[0]
    best_auc = math.inf
    best_params = [p.copy() for p in model.params()]
    best_epoch = 0
    epochs_without_improvement = 0
    history: dict = {"train_loss": [], "val_rc_auc": []}

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(
                model, x[idx], t[idx], rng=rng, train_mode=True
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            grads = clip_global_norm(grads, config.gradient_clip_norm)
            params = model.params()
            adam_step(params, grads, state, config.learning_rate,
                      config.adam_beta1, config.adam_beta2)
            model.set_params(params)
            epoch_loss += loss * len(idx)
        history["train_loss"].append(epoch_loss / n)

        val_auc = _val_rc_auc(model, val_x, val_template)
        history["val_rc_auc"].append(val_auc)
        if val_auc < best_auc:
            best_auc = val_auc
            best_params = [p.copy() for p in model.params()]
            best_epoch = epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= max(config.patience, 1):
                break

    model.set_params(best_params)
    history["best_epoch"] = best_epoch
    history["best_val_rc_auc"] = best_auc
    history["epochs_run"] = len(history["train_loss"])
    model.history = history
    model.train_config = config
    return model


def score_all(model, records: RecordSet) -> list[ScoredRecord]:
    """Attach eval-mode scores to every record, order preserved."""
    if len(records) == 0:
        return []
    if isinstance(model, MlpSelector) and records.dim != model.d_in:
        raise ValueError(
            f"feature dimension mismatch: records {records.dim}, model {model.d_in}"
        )
    scores = model.score_matrix(records.features_matrix(), records.confidences())
    return [
        ScoredRecord(record=r, score=float(s)) for r, s in zip(records, scores)
    ]


# -- checkpoints -----------------------------------------------------------

def save_selector(model, path) -> None:
    """Write a selector checkpoint: variant tag, dimensions, row-major
    flattened parameters, and the training config used (if any)."""
    if isinstance(model, MaxProbSelector):
        doc = {"variant": "maxprob"}
    elif isinstance(model, MlpSelector):
        doc = {
            "variant": "mlp",
            "d_in": model.d_in,
            "d_hidden": model.d_hidden,
            "dropout_rate": model.dropout_rate,
            "W1": model.W1.reshape(-1).tolist(),
            "b1": model.b1.tolist(),
            "W2": model.W2.tolist(),
            "b2": model.b2,
            "train_config": asdict(model.train_config) if model.train_config else None,
        }
    else:
        raise TypeError(f"not a selector model: {type(model).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_selector(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    variant = doc.get("variant")
    if variant == "maxprob":
        return MaxProbSelector()
    if variant != "mlp":
        raise ValueError(f"unknown selector variant {variant!r}")
    d_in, d_h = int(doc["d_in"]), int(doc["d_hidden"])
    W1 = np.asarray(doc["W1"], dtype=np.float64)
    if W1.size != d_h * d_in:
        raise ValueError(
            f"checkpoint W1 has {W1.size} values, expected {d_h}x{d_in}"
        )
    b1 = np.asarray(doc["b1"], dtype=np.float64)
    W2 = np.asarray(doc["W2"], dtype=np.float64)
    if b1.shape != (d_h,) or W2.shape != (d_h,):
        raise ValueError("checkpoint vector sizes do not match d_hidden")
    cfg = doc.get("train_config")
    return MlpSelector(
        W1=W1.reshape(d_h, d_in),
        b1=b1,
        W2=W2,
        b2=float(doc["b2"]),
        dropout_rate=float(doc.get("dropout_rate", 0.0)),
        train_config=TrainConfig(**cfg) if cfg else None,
    )
