"""Synthetic classification task and a small trainable classifier.

This is the desk-scale stand-in for a large answering model: it lets the
whole pipeline (peer labeling, selector training, mixture evaluation) run
end to end in seconds. The task is built so that abstention is genuinely
valuable:

* Each class is a Gaussian cluster; clusters overlap, so boundary examples
  carry reducible-looking but real risk.
* A configurable "hard" fraction of examples get uniformly re-sampled labels
  (irreducible error). Hard examples are drawn from an outward-displaced
  shell of their cluster, so their *labels* stay independent of features
  while their feature region is recognizable. Out there, relu classifiers
  tend to stay confident, which is exactly the overconfidence a selector
  needs to learn to distrust.
* OOD examples come from mean-shifted clusters with an elevated hard rate.

Datasets serialize to the standard record format: ``features`` holds the raw
input, ``predicted_answer`` carries the ground-truth class as a string (no
model has predicted yet), ``confidence`` and ``accuracy`` are 0 placeholders,
``domain_tag`` marks the split's origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterable

import numpy as np

from .optim import AdamState, adam_step, clip_global_norm
from .records import PredictionRecord, RecordSet

__all__ = [
    "SyntheticTaskConfig",
    "LabeledDataset",
    "ToyModel",
    "ToyTrainConfig",
    "generate_synthetic",
    "train_toy_classifier",
    "predict_records",
    "finite_diff_gradcheck",
    "dataset_to_records",
    "dataset_from_records",
]

GROUP_SIZE = 5  # examples per group, mimicking several questions per image


@dataclass(frozen=True)
class SyntheticTaskConfig:
    n_classes: int = 8
    dim: int = 16
    spread: float = 2.6          # scale of class-center placement
    noise: float = 1.5           # within-class noise
    hard_fraction: float = 0.15  # share of label-noise examples
    hard_stretch_min: float = 1.3  # inner radius of the hard shell
    hard_stretch_max: float = 2.2  # outer radius of the hard shell
    ood_shift: float = 5.0       # magnitude of the OOD cluster mean shift
    n_train: int = 20000
    n_val: int = 2000
    n_test_id: int = 5000
    n_test_ood: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hard_fraction < 1.0:
            raise ValueError("hard_fraction must be in [0, 1)")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 1.0 <= self.hard_stretch_min <= self.hard_stretch_max:
            raise ValueError("hard shell must satisfy 1 <= min <= max")
        for name in ("n_train", "n_val", "n_test_id", "n_test_ood"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def ood_hard_fraction(self) -> float:
        # elevated label noise out of distribution; 0 stays 0 so that
        # shift 0 + hard 0 makes the OOD split identical in law to ID
        return min(0.95, 2.0 * self.hard_fraction)

    @property
    def ood_flip_fraction(self) -> float:
        # additional in-place label flips on OOD data: noise with no feature
        # signature, so it leaks past any confidence threshold
        return min(0.95, 0.3 * self.hard_fraction)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SyntheticTaskConfig":
        return cls(**doc)


@dataclass(frozen=True)
class LabeledDataset:
    """Raw (features, label) data with group keys and bookkeeping.

    ``ids`` is set when the dataset came from a record file, so predictions
    reuse the original identifiers; generated data mints ids from the
    prediction prefix and the stable ``index``.
    """

    features: np.ndarray          # (n, dim) float64
    labels: np.ndarray            # (n,) int64
    groups: tuple[str, ...]
    hard: np.ndarray              # (n,) bool; generation-time bookkeeping
    domain_tag: str
    index: np.ndarray             # (n,) int64 stable example numbers
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "hard", np.asarray(self.hard, dtype=bool))
        object.__setattr__(self, "index", np.asarray(self.index, dtype=np.int64))

    def __len__(self) -> int:
        return self.features.shape[0]

    def record_id(self, i: int, prefix: str) -> str:
        if self.ids is not None:
            return self.ids[i]
        return f"{prefix}-{int(self.index[i])}"

    def subset(self, mask: np.ndarray) -> "LabeledDataset":
        mask = np.asarray(mask)
        return LabeledDataset(
            features=self.features[mask],
            labels=self.labels[mask],
            groups=tuple(np.asarray(self.groups, dtype=object)[mask]),
            hard=self.hard[mask],
            domain_tag=self.domain_tag,
            index=self.index[mask],
            ids=(
                None if self.ids is None
                else tuple(np.asarray(self.ids, dtype=object)[mask])
            ),
        )


def _class_centers(config: SyntheticTaskConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, config.spread, size=(config.n_classes, config.dim))


GROUP_JITTER_RATIO = 0.25  # within-group scatter relative to the class noise


def _sample_split(
    n: int,
    centers: np.ndarray,
    config: SyntheticTaskConfig,
    hard_fraction: float,
    rng: np.random.Generator,
    group_prefix: str,
    domain_tag: str,
    flip_fraction: float = 0.0,
) -> LabeledDataset:
    k, dim = centers.shape
    n_groups = math.ceil(n / GROUP_SIZE)
    group_class = rng.integers(0, k, size=n_groups)
    # examples in a group are correlated (questions about one image): the
    # group gets its own location inside the class cloud, members jitter
    # tightly around it
    group_offsets = rng.normal(0.0, config.noise, size=(n_groups, dim))

    gi = np.repeat(np.arange(n_groups), GROUP_SIZE)[:n]
    cls = group_class[gi]
    groups = tuple(f"{group_prefix}-g{g:06d}" for g in gi)
    hard = rng.random(n) < hard_fraction
    jitter = rng.normal(0.0, GROUP_JITTER_RATIO * config.noise, size=(n, dim))

    x = centers[cls] + group_offsets[gi] + jitter
    # hard examples sit on an outward shell along their center direction:
    # a recognizable region, but with unpredictable labels
    stretch = rng.uniform(config.hard_stretch_min, config.hard_stretch_max,
                          size=hard.sum())
    x[hard] = centers[cls[hard]] * stretch[:, None] + jitter[hard] + (
        rng.normal(0.0, config.noise, size=(int(hard.sum()), dim))
    )

    labels = cls.copy()
    labels[hard] = rng.integers(0, k, size=hard.sum())
    if flip_fraction > 0.0:
        flip = (rng.random(n) < flip_fraction) & ~hard
        labels[flip] = rng.integers(0, k, size=int(flip.sum()))
        hard = hard | flip
    return LabeledDataset(
        features=x,
        labels=labels,
        groups=groups,
        hard=hard,
        domain_tag=domain_tag,
        index=np.arange(n),
    )


def generator_params(config: SyntheticTaskConfig):
    """The derived generator parameters: (id centers, ood centers,
    id hard rate, ood hard rate). Exposed so the hard-0/shift-0 identity
    between the ID and OOD generators is checkable."""
    seeds = np.random.SeedSequence(config.seed).spawn(6)
    centers = _class_centers(config, np.random.default_rng(seeds[0]))
    # the shift leans half outward (off the training manifold) and half in a
    # random direction (between class rays, where predictions break)
    raw = np.random.default_rng(seeds[1]).normal(0.0, 1.0, size=centers.shape)
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radial = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    dirs = radial + raw
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ood_centers = centers + config.ood_shift * dirs
    return centers, ood_centers, config.hard_fraction, config.ood_hard_fraction


def generate_synthetic(config: SyntheticTaskConfig):
    """Generate (train, val, test_id, test_ood), deterministically from the
    config seed. OOD clusters are the ID centers shifted by ``ood_shift``
    along per-class random directions, with doubled hard rate."""
    seeds = np.random.SeedSequence(config.seed).spawn(6)
    centers, ood_centers, _, _ = generator_params(config)

    train = _sample_split(config.n_train, centers, config, config.hard_fraction,
                          np.random.default_rng(seeds[2]), "tr", "id")
    val = _sample_split(config.n_val, centers, config, config.hard_fraction,
                        np.random.default_rng(seeds[3]), "va", "id")
    test_id = _sample_split(config.n_test_id, centers, config, config.hard_fraction,
                            np.random.default_rng(seeds[4]), "te", "id")
    test_ood = _sample_split(config.n_test_ood, ood_centers, config,
                             config.ood_hard_fraction,
                             np.random.default_rng(seeds[5]), "oo", "ood",
                             flip_fraction=config.ood_flip_fraction)
    return train, val, test_id, test_ood


# -- classifier ---------------------------------------------------------------


@dataclass(frozen=True)
class ToyTrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 256
    max_epochs: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gradient_clip_norm: float = 5.0
    hidden_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.gradient_clip_norm <= 0:
            raise ValueError("gradient_clip_norm must be > 0")


@dataclass
class ToyModel:
    """One relu hidden layer with a softmax head."""

    W1: np.ndarray  # (d_h, d_in)
    b1: np.ndarray  # (d_h,)
    W2: np.ndarray  # (k, d_h)
    b2: np.ndarray  # (k,)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def init(cls, d_in: int, d_hidden: int, n_classes: int,
             rng: np.random.Generator) -> "ToyModel":
        return cls(
            W1=rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_hidden, d_in)),
            b1=np.zeros(d_hidden),
            W2=rng.normal(0.0, 1.0 / math.sqrt(d_hidden), size=(n_classes, d_hidden)),
            b2=np.zeros(n_classes),
        )

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.W1, self.b1, self.W2, self.b2 = params

    def hidden(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.W1.T + self.b1, 0.0)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.hidden(x) @ self.W2.T + self.b2

    def probs(self, x: np.ndarray) -> np.ndarray:
        return _softmax(self.logits(x))


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def toy_loss_and_grad(model: ToyModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and gradients for [W1, b1, W2, b2]."""
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    n = x.shape[0]
    pre = x @ model.W1.T + model.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ model.W2.T + model.b2
    probs = _softmax(logits)
    eps = 1e-300  # log underflow guard only
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + eps)))

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    gW2 = dlogits.T @ hidden
    gb2 = dlogits.sum(axis=0)
    dhid = dlogits @ model.W2
    dpre = dhid * (pre > 0.0)
    gW1 = dpre.T @ x
    gb1 = dpre.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2]


class ToyTrainingDiverged(RuntimeError):
    pass


def train_toy_classifier(
    data: LabeledDataset, config: ToyTrainConfig, n_classes: int | None = None
) -> ToyModel:
    """Seeded Adam on cross-entropy; zero epochs returns the initialization.

    Pass ``n_classes`` explicitly when training on a subset that may not
    contain every class, so all peer models share one output layout.
    """
    if len(data) == 0:
        raise ValueError("training data must be nonempty")
    rng = np.random.default_rng(config.seed)
    if n_classes is None:
        n_classes = int(data.labels.max()) + 1
    elif data.labels.max() >= n_classes:
        raise ValueError(
            f"label {int(data.labels.max())} out of range for {n_classes} classes"
        )
    model = ToyModel.init(data.features.shape[1], config.hidden_dim, n_classes, rng)
    state = AdamState(model.params())
    x, y = data.features, data.labels
    n = len(data)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = toy_loss_and_grad(model, x[idx], y[idx])
            if not math.isfinite(loss):
                raise ToyTrainingDiverged(f"non-finite loss at epoch {epoch}")
            grads = clip_global_norm(grads, config.gradient_clip_norm)
            params = model.params()
            adam_step(params, grads, state, config.learning_rate,
                      config.adam_beta1, config.adam_beta2)
            model.set_params(params)
    return model


def predict_records(model: ToyModel, data: LabeledDataset, id_prefix: str) -> RecordSet:
    """Run the classifier over a dataset and emit prediction records.

    Per example: confidence is the max softmax probability, accuracy is 1
    iff the argmax matches the label, and the selector features are the
    concatenation of hidden activations, logits and the max probability.
    Ids are ``{id_prefix}-{example index}`` so the same underlying example
    gets the same id no matter which model predicts on it.
    """
    if data.features.shape[1] != model.d_in:
        raise ValueError(
            f"feature dimension mismatch: data {data.features.shape[1]}, "
            f"model {model.d_in}"
        )
    hidden = model.hidden(data.features)
    logits = hidden @ model.W2.T + model.b2
    probs = _softmax(logits)
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    correct = (pred == data.labels).astype(np.float64)
    feats = np.concatenate([hidden, logits, conf[:, None]], axis=1)
    records = [
        PredictionRecord(
            id=data.record_id(i, id_prefix),
            group=data.groups[i],
            features=feats[i],
            confidence=float(conf[i]),
            accuracy=float(correct[i]),
            predicted_answer=str(int(pred[i])),
            domain_tag=data.domain_tag,
        )
        for i in range(len(data))
    ]
    return RecordSet(records)


def finite_diff_gradcheck(
    loss_and_grad_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad_fn`` maps a flat parameter vector to (loss, flat grad)
    and must be deterministic (disable dropout). Relative error per
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    loss, grad = loss_and_grad_fn(theta)
    if not math.isfinite(loss):
        raise ValueError("non-finite loss at the expansion point")
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += eps
        up, _ = loss_and_grad_fn(bumped)
        bumped[i] -= 2 * eps
        down, _ = loss_and_grad_fn(bumped)
        numeric = (up - down) / (2 * eps)
        denom = max(abs(grad[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(grad[i] - numeric) / denom)
    return worst


# -- dataset files -------------------------------------------------------------

def dataset_to_records(data: LabeledDataset, id_prefix: str) -> RecordSet:
    """Serialize a raw dataset in the record format (see module docstring)."""
    return RecordSet(
        PredictionRecord(
            id=f"{id_prefix}-{int(data.index[i])}",
            group=data.groups[i],
            features=data.features[i],
            confidence=0.0,
            accuracy=0.0,
            predicted_answer=str(int(data.labels[i])),
            domain_tag=data.domain_tag,
        )
        for i in range(len(data))
    )


def dataset_from_records(records: RecordSet) -> LabeledDataset:
    """Rebuild a raw dataset from its record-format serialization.

    The hard-example bookkeeping is generation-time only and does not
    round-trip; it comes back as all-False.
    """
    n = len(records)
    if n == 0:
        raise ValueError("cannot build a dataset from an empty record set")
    labels = np.empty(n, dtype=np.int64)
    tags = records.domain_tags()
    for i, rec in enumerate(records):
        if rec.predicted_answer is None:
            raise ValueError(
                f"record {rec.id!r} has no class label in 'predicted_answer'"
            )
        try:
            labels[i] = int(rec.predicted_answer)
        except ValueError as exc:
            raise ValueError(
                f"record {rec.id!r}: class label {rec.predicted_answer!r} "
                "is not an integer"
            ) from exc
    tag = tags[0]
    if any(t != tag for t in tags):
        raise ValueError("dataset records must share one domain_tag")
    return LabeledDataset(
        features=records.features_matrix(),
        labels=labels,
        groups=records.groups(),
        hard=np.zeros(n, dtype=bool),
        domain_tag=tag,
        index=np.arange(n),
        ids=records.ids(),
    )
