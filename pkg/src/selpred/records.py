"""Prediction records: the data model every other module consumes.

A record captures one example as seen by some upstream model: an opaque id,
a group key (the unit that must never be split across training partitions),
a feature vector for selector training, the model's own confidence, and a
correctness label ``accuracy`` in [0, 1].

Records travel as UTF-8 newline-delimited JSON, one object per line, with
keys ``id``, ``group``, ``features``, ``confidence``, ``accuracy`` and
optional ``predicted_answer`` and ``domain_tag`` (default ``"id"``).
Unknown keys are rejected.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

__all__ = [
    "PredictionRecord",
    "RecordSet",
    "RecordError",
    "parse_records",
    "write_records",
    "vqa_accuracy",
]

REQUIRED_KEYS = ("id", "group", "features", "confidence", "accuracy")
OPTIONAL_KEYS = ("predicted_answer", "domain_tag")


class RecordError(ValueError):
    """Malformed record data (bad line, duplicate id, invalid field)."""


def _freeze(vec) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise RecordError(f"features must be a flat vector, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PredictionRecord:
    """One example's identity, features, confidence and correctness label."""

    id: str
    group: str
    features: np.ndarray
    confidence: float
    accuracy: float
    predicted_answer: str | None = None
    domain_tag: str = "id"

    def __post_init__(self):
        object.__setattr__(self, "features", _freeze(self.features))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "accuracy", float(self.accuracy))
        if not 0.0 <= self.accuracy <= 1.0:
            raise RecordError(
                f"record {self.id!r}: accuracy {self.accuracy} outside [0, 1]"
            )
        if not np.isfinite(self.confidence):
            raise RecordError(f"record {self.id!r}: non-finite confidence")
        if not np.all(np.isfinite(self.features)):
            raise RecordError(f"record {self.id!r}: non-finite feature value")
        if not self.domain_tag:
            raise RecordError(f"record {self.id!r}: empty domain_tag")

    def replace(self, **changes) -> "PredictionRecord":
        fields = {
            "id": self.id,
            "group": self.group,
            "features": self.features,
            "confidence": self.confidence,
            "accuracy": self.accuracy,
            "predicted_answer": self.predicted_answer,
            "domain_tag": self.domain_tag,
        }
        fields.update(changes)
        return PredictionRecord(**fields)

    def to_json_dict(self) -> dict:
        out = {
            "id": self.id,
            "group": self.group,
            "features": [float(x) for x in self.features],
            "confidence": self.confidence,
            "accuracy": self.accuracy,
        }
        if self.predicted_answer is not None:
            out["predicted_answer"] = self.predicted_answer
        if self.domain_tag != "id":
            out["domain_tag"] = self.domain_tag
        return out


def record_from_json_dict(obj: dict, extra_keys: tuple[str, ...] = ()) -> PredictionRecord:
    """Build a record from a decoded JSON object, rejecting unknown keys."""
    if not isinstance(obj, dict):
        raise RecordError(f"expected a JSON object, got {type(obj).__name__}")
    allowed = set(REQUIRED_KEYS) | set(OPTIONAL_KEYS) | set(extra_keys)
    for key in obj:
        if key not in allowed:
            raise RecordError(f"unknown key {key!r}")
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise RecordError(f"missing key {key!r}")
    if not isinstance(obj["id"], str):
        raise RecordError("field 'id' must be a string")
    if not isinstance(obj["group"], str):
        raise RecordError("field 'group' must be a string")
    feats = obj["features"]
    if not isinstance(feats, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in feats
    ):
        raise RecordError("field 'features' must be an array of numbers")
    for key in ("confidence", "accuracy"):
        if not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
            raise RecordError(f"field {key!r} must be a number")
    answer = obj.get("predicted_answer")
    if answer is not None and not isinstance(answer, str):
        raise RecordError("field 'predicted_answer' must be a string")
    tag = obj.get("domain_tag", "id")
    if not isinstance(tag, str):
        raise RecordError("field 'domain_tag' must be a string")
    return PredictionRecord(
        id=obj["id"],
        group=obj["group"],
        features=feats,
        confidence=obj["confidence"],
        accuracy=obj["accuracy"],
        predicted_answer=answer,
        domain_tag=tag,
    )


class RecordSet:
    """Immutable, order-preserving collection of records with one feature dim.

    Validates id uniqueness and dimensional consistency at construction.
    The feature dimension is ``None`` for an empty set ("undefined until
    the first record").
    """

    __slots__ = ("_records", "_by_id", "_dim")

    def __init__(self, records: Iterable[PredictionRecord]):
        recs = tuple(records)
        by_id: dict[str, int] = {}
        dim = None
        for i, rec in enumerate(recs):
            if rec.id in by_id:
                raise RecordError(f"duplicate id {rec.id!r}")
            by_id[rec.id] = i
            if dim is None:
                dim = rec.features.shape[0]
            elif rec.features.shape[0] != dim:
                raise RecordError(
                    f"record {rec.id!r} has {rec.features.shape[0]} features, "
                    f"expected {dim}"
                )
        self._records = recs
        self._by_id = by_id
        self._dim = dim

    @property
    def dim(self) -> int | None:
        return self._dim

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[PredictionRecord]:
        return iter(self._records)

    def __getitem__(self, i: int) -> PredictionRecord:
        return self._records[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RecordSet):
            return NotImplemented
        if len(self) != len(other):
            return False
        for a, b in zip(self, other):
            if (
                a.id != b.id
                or a.group != b.group
                or a.confidence != b.confidence
                or a.accuracy != b.accuracy
                or a.predicted_answer != b.predicted_answer
                or a.domain_tag != b.domain_tag
                or not np.array_equal(a.features, b.features)
            ):
                return False
        return True

    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self._records)

    def groups(self) -> tuple[str, ...]:
        return tuple(r.group for r in self._records)

    def by_id(self, rec_id: str) -> PredictionRecord:
        return self._records[self._by_id[rec_id]]

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._by_id

    def features_matrix(self) -> np.ndarray:
        if not self._records:
            return np.zeros((0, 0))
        return np.stack([r.features for r in self._records])

    def confidences(self) -> np.ndarray:
        return np.array([r.confidence for r in self._records], dtype=np.float64)

    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self._records], dtype=np.float64)

    def domain_tags(self) -> tuple[str, ...]:
        return tuple(r.domain_tag for r in self._records)

    def subset(self, indices: Iterable[int]) -> "RecordSet":
        return RecordSet(self._records[i] for i in indices)


def parse_records(stream: IO | str | bytes) -> RecordSet:
    """Parse newline-delimited JSON records from a stream, string or bytes.

    Errors carry the 1-based line number of the offending line.
    """
    if isinstance(stream, bytes):
        text: IO = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        text = io.StringIO(stream)
    elif isinstance(stream, io.BufferedIOBase) or (
        hasattr(stream, "mode") and "b" in getattr(stream, "mode", "")
    ):
        text = io.TextIOWrapper(stream, encoding="utf-8")
    else:
        text = stream

    records = []
    seen: set[str] = set()
    dim = None
    for lineno, line in enumerate(text, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        try:
            rec = record_from_json_dict(obj)
        except RecordError as exc:
            raise RecordError(f"line {lineno}: {exc}") from exc
        if rec.id in seen:
            raise RecordError(f"line {lineno}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        if dim is None:
            dim = rec.features.shape[0]
        elif rec.features.shape[0] != dim:
            raise RecordError(
                f"line {lineno}: record {rec.id!r} has {rec.features.shape[0]} "
                f"features, expected {dim}"
            )
        records.append(rec)
    return RecordSet(records)


def write_records(records: Iterable[PredictionRecord], stream: IO) -> None:
    """Write records as newline-delimited JSON to a text stream."""
    for rec in records:
        stream.write(json.dumps(rec.to_json_dict()))
        stream.write("\n")


def dumps_records(records: Iterable[PredictionRecord]) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


def load_records(path) -> RecordSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_records(fh)


def save_records(records: Iterable[PredictionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_records(records, fh)


def _normalize_answer(text: str) -> str:
    return text.strip().lower()


def vqa_accuracy(predicted: str, human_answers: list[str]) -> float:
    """Consensus accuracy of a predicted answer against 10 human answers.

    Averages, over all 10 leave-one-annotator-out subsets, the score
    min(1, matches_in_subset / 3). Matching is exact string equality after
    lowercasing and whitespace trimming. With n total matches this is the
    closed form (n * min(1, (n-1)/3) + (10-n) * min(1, n/3)) / 10.
    """
    if len(human_answers) != 10:
        raise ValueError(f"expected exactly 10 human answers, got {len(human_answers)}")
    target = _normalize_answer(predicted)
    n = sum(1 for ans in human_answers if _normalize_answer(ans) == target)
    return (n * min(1.0, (n - 1) / 3.0) + (10 - n) * min(1.0, n / 3.0)) / 10.0
