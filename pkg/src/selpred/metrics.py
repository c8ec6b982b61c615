"""Selective-prediction metrics and threshold selection.

All operations are pure functions over scored records. A scored record is a
prediction record plus the selector output ``score``; the deployment rule is
"answer iff score >= gamma". Conventions that matter for exactness:

* The risk-coverage curve and its AUC use a canonical total order
  (score descending, id ascending) at per-example granularity; the AUC is
  the mean of per-prefix risks.
* Coverage-at-risk and threshold selection sweep only deployable thresholds,
  i.e. the distinct scores (plus the abstain-on-all sentinel +inf), so tied
  scores are never split.
* Zero coverage makes risk undefined: it is reported as an explicit error
  (or ``None`` in a report), never silently 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .records import (
    PredictionRecord,
    RecordError,
    RecordSet,
    record_from_json_dict,
)

__all__ = [
    "ScoredRecord",
    "ThresholdPolicy",
    "MetricsReport",
    "ZeroCoverageError",
    "decide",
    "decide_all",
    "coverage",
    "risk",
    "risk_coverage_curve",
    "coverage_at_risk",
    "rc_auc",
    "effective_reliability",
    "select_threshold_phi",
    "select_threshold_for_risk",
    "evaluate",
]


class ZeroCoverageError(ValueError):
    """Risk is undefined on an empty covered subset."""


@dataclass(frozen=True)
class ScoredRecord:
    """A prediction record with its selector score attached."""

    record: PredictionRecord
    score: float

    def __post_init__(self):
        object.__setattr__(self, "score", float(self.score))
        if not math.isfinite(self.score):
            raise ValueError(f"record {self.record.id!r}: non-finite score")


@dataclass(frozen=True)
class ThresholdPolicy:
    """A scalar abstention threshold plus the rule that produced it.

    ``rule`` is one of "fixed", "max_phi" (param = cost) or "target_risk"
    (param = risk level). ``gamma`` may be +inf (abstain on everything) or
    -inf (answer everything); finite otherwise.
    """

    gamma: float
    rule: str = "fixed"
    param: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "gamma", float(self.gamma))
        if math.isnan(self.gamma):
            raise ValueError("threshold gamma may not be NaN")
        if self.rule not in ("fixed", "max_phi", "target_risk"):
            raise ValueError(f"unknown threshold rule {self.rule!r}")


@dataclass(frozen=True)
class RealizedPoint:
    """Coverage and risk at an applied threshold; risk None if undefined."""

    coverage: float
    risk: float | None


@dataclass
class MetricsReport:
    """Aggregate of every selective-prediction metric for one evaluation."""

    curve: list[tuple[float, float]]
    c_at_r: dict[float, float]
    rc_auc: float
    phi: dict[float, float]
    realized: RealizedPoint
    accuracy: float
    gamma: float = math.inf

    def to_json_dict(self) -> dict:
        return {
            "accuracy": round(self.accuracy, 6),
            "rc_auc": round(self.rc_auc, 6),
            "gamma": _json_float(self.gamma),
            "realized": {
                "coverage": round(self.realized.coverage, 6),
                "risk": None if self.realized.risk is None else round(self.realized.risk, 6),
            },
            "c_at_r": {_level_key(k): round(v, 4) for k, v in self.c_at_r.items()},
            "phi": {_level_key(k): round(v, 6) for k, v in self.phi.items()},
            "curve": [[round(c, 6), round(r, 6)] for c, r in self.curve],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["coverage", "risk"])
        for cov, rsk in self.curve:
            writer.writerow([repr(float(cov)), repr(float(rsk))])
        return buf.getvalue()


def _json_float(x: float):
    # strict JSON has no Infinity literal
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _level_key(x: float) -> str:
    return format(float(x), "g")


def decide(scored: ScoredRecord, policy: ThresholdPolicy) -> int:
    """1 iff the record's score clears the threshold (boundary inclusive)."""
    return 1 if scored.score >= policy.gamma else 0


def decide_all(scored: Sequence[ScoredRecord], policy: ThresholdPolicy) -> np.ndarray:
    scores = np.array([s.score for s in scored], dtype=np.float64)
    return (scores >= policy.gamma).astype(np.int64)


def coverage(decisions: Sequence[int]) -> float:
    """Fraction of answered examples."""
    arr = np.asarray(decisions, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("coverage of an empty decision list is undefined")
    return float(arr.mean())


def risk(records: Sequence[PredictionRecord], decisions: Sequence[int]) -> float:
    """Average error over the answered subset."""
    dec = np.asarray(decisions, dtype=np.float64)
    acc = np.array([r.accuracy for r in records], dtype=np.float64)
    if dec.shape != acc.shape:
        raise ValueError(f"length mismatch: {acc.size} records, {dec.size} decisions")
    answered = dec.sum()
    if answered == 0:
        raise ZeroCoverageError("risk undefined: no example is answered")
    return float(((1.0 - acc) * dec).sum() / answered)


def _canonical_order(scored: Sequence[ScoredRecord]) -> list[ScoredRecord]:
    # deterministic: score descending, id ascending
    return sorted(scored, key=lambda s: (-s.score, s.record.id))


def _prefix_risks(ordered: Sequence[ScoredRecord]) -> np.ndarray:
    errors = np.array([1.0 - s.record.accuracy for s in ordered], dtype=np.float64)
    k = np.arange(1, errors.size + 1, dtype=np.float64)
    return np.cumsum(errors) / k


def risk_coverage_curve(scored: Sequence[ScoredRecord]) -> list[tuple[float, float]]:
    """One (coverage, risk) point per prefix of the canonical score order."""
    if not scored:
        raise ValueError("risk-coverage curve of an empty set is undefined")
    ordered = _canonical_order(scored)
    risks = _prefix_risks(ordered)
    n = len(ordered)
    return [((k + 1) / n, float(risks[k])) for k in range(n)]


def rc_auc(scored: Sequence[ScoredRecord]) -> float:
    """Mean of per-prefix risks: rectangle rule on the per-example curve."""
    if not scored:
        raise ValueError("rc_auc of an empty set is undefined")
    return float(_prefix_risks(_canonical_order(scored)).mean())


def _threshold_sweep(scored: Sequence[ScoredRecord]):
    """Per distinct score gamma (descending): coverage and risk of {s >= gamma}.

    Returns (gammas, coverages, risks) over the tie-grouped prefixes.
    """
    ordered = _canonical_order(scored)
    scores = np.array([s.score for s in ordered], dtype=np.float64)
    errors = np.array([1.0 - s.record.accuracy for s in ordered], dtype=np.float64)
    n = scores.size
    cum_err = np.cumsum(errors)
    # last index of each tie group marks a deployable threshold
    boundary = np.nonzero(np.append(scores[1:] != scores[:-1], True))[0]
    gammas = scores[boundary]
    counts = (boundary + 1).astype(np.float64)
    coverages = counts / n
    risks = cum_err[boundary] / counts
    return gammas, coverages, risks


def coverage_at_risk(
    scored: Sequence[ScoredRecord], risk_level: float
) -> tuple[float, float]:
    """Maximum coverage over deployable thresholds with risk <= risk_level.

    Candidate thresholds are the distinct scores, so tied scores are never
    split. Returns (coverage, gamma); (0.0, +inf) when nothing qualifies.
    Ties in coverage break toward the larger gamma.
    """
    if not 0.0 <= risk_level <= 1.0:
        raise ValueError(f"risk level {risk_level} outside [0, 1]")
    if not scored:
        raise ValueError("coverage_at_risk of an empty set is undefined")
    gammas, coverages, risks = _threshold_sweep(scored)
    ok = risks <= risk_level
    if not ok.any():
        return 0.0, math.inf
    best_cov = coverages[ok].max()
    # gammas run descending; the first qualifying index at best coverage is
    # the largest gamma achieving it
    idx = int(np.nonzero(ok & (coverages == best_cov))[0][0])
    return float(best_cov), float(gammas[idx])


def effective_reliability(
    records: Sequence[PredictionRecord], decisions: Sequence[int], cost: float
) -> float:
    """Mean per-example score: accuracy if answered and right (in part),
    -cost if answered and fully wrong, 0 if abstained."""
    if cost < 0:
        raise ValueError(f"cost must be nonnegative, got {cost}")
    dec = np.asarray(decisions, dtype=np.float64)
    acc = np.array([r.accuracy for r in records], dtype=np.float64)
    if dec.shape != acc.shape:
        raise ValueError(f"length mismatch: {acc.size} records, {dec.size} decisions")
    if acc.size == 0:
        raise ValueError("effective reliability of an empty set is undefined")
    per_example = np.where(acc > 0.0, acc, -float(cost)) * dec
    return float(per_example.mean())


def select_threshold_phi(
    val_scored: Sequence[ScoredRecord], cost: float
) -> ThresholdPolicy:
    """Exhaustive sweep of distinct validation scores plus +inf, maximizing
    effective reliability; ties break toward the larger (more conservative)
    gamma."""
    if not val_scored:
        raise ValueError("cannot select a threshold on an empty validation set")
    if cost < 0:
        raise ValueError(f"cost must be nonnegative, got {cost}")
    ordered = _canonical_order(val_scored)
    scores = np.array([s.score for s in ordered], dtype=np.float64)
    acc = np.array([s.record.accuracy for s in ordered], dtype=np.float64)
    n = scores.size
    gain = np.where(acc > 0.0, acc, -float(cost))
    cum_gain = np.cumsum(gain)
    boundary = np.nonzero(np.append(scores[1:] != scores[:-1], True))[0]
    # candidates in descending-gamma order, +inf (phi = 0) first
    gammas = np.concatenate(([math.inf], scores[boundary]))
    phis = np.concatenate(([0.0], cum_gain[boundary] / n))
    best = int(np.argmax(phis))  # first occurrence keeps the larger gamma
    return ThresholdPolicy(gamma=float(gammas[best]), rule="max_phi", param=float(cost))


def select_threshold_for_risk(
    val_scored: Sequence[ScoredRecord], target_risk: float
) -> ThresholdPolicy:
    """Maximum-coverage threshold with validation risk <= target_risk.

    The realized risk on shifted test data may differ; measuring that gap is
    the point of the threshold-generalization evaluation.
    """
    _, gamma = coverage_at_risk(val_scored, target_risk)
    return ThresholdPolicy(gamma=gamma, rule="target_risk", param=float(target_risk))


def evaluate(
    scored_test: Sequence[ScoredRecord],
    policy: ThresholdPolicy,
    risk_levels: Iterable[float] = (),
    costs: Iterable[float] = (),
) -> MetricsReport:
    """Fill a full report: curve, AUC, C@R per level, phi per cost at the
    given policy, and realized coverage/risk at the policy threshold."""
    if not scored_test:
        raise ValueError("cannot evaluate an empty test set")
    records = [s.record for s in scored_test]
    decisions = decide_all(scored_test, policy)
    cov = coverage(decisions)
    try:
        realized_risk: float | None = risk(records, decisions)
    except ZeroCoverageError:
        realized_risk = None
    return MetricsReport(
        curve=risk_coverage_curve(scored_test),
        c_at_r={
            float(lv): coverage_at_risk(scored_test, lv)[0] for lv in risk_levels
        },
        rc_auc=rc_auc(scored_test),
        phi={
            float(c): effective_reliability(records, decisions, c) for c in costs
        },
        realized=RealizedPoint(coverage=cov, risk=realized_risk),
        accuracy=float(np.mean([r.accuracy for r in records])),
        gamma=policy.gamma,
    )


# -- scored-record files -------------------------------------------------

def scored_to_json_dict(scored: ScoredRecord) -> dict:
    out = scored.record.to_json_dict()
    out["score"] = scored.score
    return out


def parse_scored_records(stream: IO | str | bytes) -> list[ScoredRecord]:
    """Parse a scored-record file: the record format plus a ``score`` key."""
    if isinstance(stream, bytes):
        text = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        text = io.StringIO(stream)
    else:
        text = stream
    out: list[ScoredRecord] = []
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
            if not isinstance(obj, dict) or "score" not in obj:
                raise RecordError("missing key 'score'")
            score = obj.pop("score")
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise RecordError("field 'score' must be a number")
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
        out.append(ScoredRecord(record=rec, score=float(score)))
    return out


def write_scored_records(scored: Iterable[ScoredRecord], stream: IO) -> None:
    for s in scored:
        stream.write(json.dumps(scored_to_json_dict(s)))
        stream.write("\n")


def load_scored_records(path) -> list[ScoredRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scored_records(fh)


def save_scored_records(scored: Iterable[ScoredRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_scored_records(scored, fh)
