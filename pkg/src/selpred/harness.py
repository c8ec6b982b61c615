"""Experiment orchestration: data roles, peer-labeling pipeline, method grid,
ID/OOD mixtures, and report emission.

An experiment evaluates a grid of abstention methods over a grid of test
mixtures. Mixtures keep a fixed count of OOD records and vary the number of
in-distribution records to hit a target ID proportion alpha; the alpha = 1
column is the entire ID test pool (the conventional pure-ID table). All
thresholds are selected on the in-distribution validation split only, never
on OOD data; the report carries provenance to audit that.

Methods:

* ``maxprob``: the base model's confidence is the score.
* ``selector-self``: an MLP selector trained on the final model's own
  correctness over its own training data.
* ``selector-heldout``: base model trained on split A, selector trained on
  its predictions over a held-out split B (the prior-work configuration).
* ``selector-lyp``: selector trained on heldout peer labels from N
  leave-one-out models (the full-data configuration).
* ``selector-lyp-a-self-b``: base model trained on A; selector trained on
  peer labels over A plus the model's own labels over the unseen B.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import (
    MetricsReport,
    RealizedPoint,
    ScoredRecord,
    ThresholdPolicy,
    ZeroCoverageError,
    coverage,
    coverage_at_risk,
    decide_all,
    effective_reliability,
    rc_auc,
    risk,
    risk_coverage_curve,
    select_threshold_for_risk,
    select_threshold_phi,
)
from .peers import (
    PeerLabeledSet,
    lyp_a_self_b,
    partition_group_keys,
    recombine_peer_labels,
    with_peer_labels,
)
from .records import RecordSet, load_records
from .selector import MaxProbSelector, TrainConfig, score_all, train_selector
from .toymodel import (
    LabeledDataset,
    SyntheticTaskConfig,
    ToyModel,
    ToyTrainConfig,
    generate_synthetic,
    predict_records,
    train_toy_classifier,
)

__all__ = [
    "MixtureSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "CellReport",
    "LypResult",
    "METHODS",
    "build_mixture",
    "run_lyp_pipeline",
    "run_experiment",
    "emit_report",
    "build_cell",
    "load_experiment_config",
]

METHODS = (
    "maxprob",
    "selector-self",
    "selector-heldout",
    "selector-lyp",
    "selector-lyp-a-self-b",
)


@dataclass(frozen=True)
class MixtureSpec:
    """A target mixture: fixed OOD count, ID proportion alpha, sampling seed."""

    alpha: float
    ood_count: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if self.ood_count < 1:
            raise ValueError("ood_count must be >= 1")

    @property
    def id_count(self) -> int:
        """Nearest-integer ID count for the target alpha. At alpha = 1 the
        requested size is all ID."""
        if self.alpha == 1.0:
            return self.ood_count
        return int(math.floor(self.ood_count * self.alpha / (1.0 - self.alpha) + 0.5))

    @property
    def ood_used(self) -> int:
        return 0 if self.alpha == 1.0 else self.ood_count


def build_mixture(id_pool: RecordSet, ood_pool: RecordSet, spec: MixtureSpec) -> RecordSet:
    """Assemble one evaluation mixture.

    The first ``ood_count`` OOD-pool records are kept fixed (identical across
    alphas); ID records are sampled without replacement with the spec's seed;
    the combined set is shuffled deterministically. Records are re-tagged by
    their source pool so the mixture composition is auditable.
    """
    overlap = set(id_pool.ids()) & set(ood_pool.ids())
    if overlap:
        raise ValueError(f"pools share id {sorted(overlap)[0]!r}")
    n_ood = spec.ood_used
    n_id = spec.id_count
    if n_ood > len(ood_pool):
        raise ValueError(
            f"ood pool has {len(ood_pool)} records, mixture needs {n_ood}"
        )
    if n_id > len(id_pool):
        raise ValueError(
            f"id pool has {len(id_pool)} records, mixture needs {n_id}"
        )
    rng = np.random.default_rng(spec.seed)
    id_positions = rng.choice(len(id_pool), size=n_id, replace=False)
    chosen = [id_pool[int(i)].replace(domain_tag="id") for i in id_positions]
    chosen += [ood_pool[i].replace(domain_tag="ood") for i in range(n_ood)]
    order = rng.permutation(len(chosen))
    return RecordSet(chosen[int(i)] for i in order)


# -- peer-labeling pipeline ----------------------------------------------------


@dataclass(frozen=True)
class LypResult:
    """Output of the pipeline: the final model, its records over the full
    training data (own labels), and the peer-labeled set (heldout labels)."""

    final_model: ToyModel
    final_records: RecordSet
    peer_labeled: PeerLabeledSet

    def selector_train_records(self) -> RecordSet:
        """Final-model features paired with the heldout peer labels."""
        return with_peer_labels(self.final_records, self.peer_labeled)


def _peer_task(args):
    train_data, heldout_data, config, n_classes = args
    model = train_toy_classifier(train_data, config, n_classes=n_classes)
    return predict_records(model, heldout_data, "tr")


def run_lyp_pipeline(
    full_train: LabeledDataset,
    n_peers: int,
    toy_config: ToyTrainConfig,
    n_classes: int,
    partition_seed: int = 0,
    jobs: int = 1,
    peer_seed_base: int | None = None,
    partition=None,
) -> LypResult:
    """Partition by group, train one peer per subset on the complement,
    collect heldout predictions, and train the final model on everything.

    Peer task n uses seed ``peer_seed_base + n`` (default base is the toy
    seed + 1000), so parallel and serial schedules agree bitwise. An existing
    partition manifest can be passed instead of ``partition_seed``.
    """
    if partition is None:
        partition = partition_group_keys(full_train.groups, n_peers, partition_seed)
    elif partition.n_subsets != n_peers:
        raise ValueError(
            f"partition has {partition.n_subsets} subsets, expected {n_peers}"
        )
    if peer_seed_base is None:
        peer_seed_base = toy_config.seed + 1000
    subset_idx = np.array([partition.subset_of(g) for g in full_train.groups])

    tasks = []
    for n in range(n_peers):
        held_mask = subset_idx == n
        cfg = replace(toy_config, seed=peer_seed_base + n)
        tasks.append((full_train.subset(~held_mask), full_train.subset(held_mask),
                      cfg, n_classes))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_peer_task, tasks))
    else:
        parts = [_peer_task(t) for t in tasks]

    final_model = train_toy_classifier(full_train, toy_config, n_classes=n_classes)
    final_records = predict_records(final_model, full_train, "tr")
    peer_labeled = recombine_peer_labels(final_records, parts)
    return LypResult(final_model=final_model, final_records=final_records,
                     peer_labeled=peer_labeled)


# -- experiment configuration ----------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    methods: tuple[str, ...] = ("maxprob", "selector-self", "selector-lyp")
    alphas: tuple[float, ...] = (1.0, 0.9, 0.667, 0.5, 0.333)
    ood_count: int = 500
    risk_levels: tuple[float, ...] = (0.01, 0.05, 0.10)
    costs: tuple[float, ...] = (1.0, 10.0, 100.0)
    n_peers: int = 10
    b_fraction: float = 0.2
    synthetic: SyntheticTaskConfig | None = None
    files: dict | None = None
    toy_train: ToyTrainConfig = ToyTrainConfig()
    selector_train: TrainConfig = TrainConfig()
    partition_seed: int | None = None
    mixture_seed: int | None = None
    jobs: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method required")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; valid: {', '.join(METHODS)}")
        if not self.alphas:
            raise ValueError("at least one mixture alpha required")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha {a} outside [0, 1]")
        if self.synthetic is None and self.files is None:
            raise ValueError("a data source (synthetic or files) is required")
        if not 0.0 < self.b_fraction < 1.0:
            raise ValueError("b_fraction must be in (0, 1)")
        if self.partition_seed is None:
            object.__setattr__(self, "partition_seed", self.seed + 11)
        if self.mixture_seed is None:
            object.__setattr__(self, "mixture_seed", self.seed + 13)

    def to_json_dict(self) -> dict:
        doc = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "methods": list(self.methods),
            "alphas": list(self.alphas),
            "ood_count": self.ood_count,
            "risk_levels": list(self.risk_levels),
            "costs": list(self.costs),
            "n_peers": self.n_peers,
            "b_fraction": self.b_fraction,
            "partition_seed": self.partition_seed,
            "mixture_seed": self.mixture_seed,
            "jobs": self.jobs,
            "toy_train": asdict(self.toy_train),
            "selector_train": asdict(self.selector_train),
        }
        if self.synthetic is not None:
            doc["data"] = {"synthetic": asdict(self.synthetic)}
        else:
            doc["data"] = {"files": dict(self.files)}
        return doc


def load_experiment_config(path) -> ExperimentConfig:
    """Read an experiment config document; file paths resolve relative to it."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    data = doc.get("data", {})
    synthetic = None
    files = None
    if "synthetic" in data:
        synthetic = SyntheticTaskConfig(**data["synthetic"])
    if "files" in data:
        files = {
            key: str((path.parent / p).resolve())
            for key, p in data["files"].items()
        }
    kwargs = {k: v for k, v in doc.items() if k != "data"}
    if "methods" in kwargs:
        kwargs["methods"] = tuple(kwargs["methods"])
    if "alphas" in kwargs:
        kwargs["alphas"] = tuple(float(a) for a in kwargs["alphas"])
    if "risk_levels" in kwargs:
        kwargs["risk_levels"] = tuple(float(r) for r in kwargs["risk_levels"])
    if "costs" in kwargs:
        kwargs["costs"] = tuple(float(c) for c in kwargs["costs"])
    if "toy_train" in kwargs:
        kwargs["toy_train"] = ToyTrainConfig(**kwargs["toy_train"])
    if "selector_train" in kwargs:
        kwargs["selector_train"] = TrainConfig(**kwargs["selector_train"])
    return ExperimentConfig(synthetic=synthetic, files=files, **kwargs)


# -- per-cell metrics --------------------------------------------------------------


@dataclass
class CellReport:
    """Every metric for one (method, mixture) cell, plus provenance for the
    thresholds applied."""

    method: str
    alpha: float
    realized_alpha: float
    n_records: int
    n_id: int
    n_ood: int
    metrics: MetricsReport
    phi_thresholds: dict[float, float]
    realized_at_risk: dict[float, dict]
    threshold_provenance: dict

    def to_json_dict(self) -> dict:
        doc = {
            "method": self.method,
            "alpha": self.alpha,
            "realized_alpha": round(self.realized_alpha, 6),
            "n_records": self.n_records,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "metrics": self.metrics.to_json_dict(),
            "phi_thresholds": {
                format(c, "g"): _json_float(g) for c, g in self.phi_thresholds.items()
            },
            "realized_at_risk": {
                format(lv, "g"): entry for lv, entry in self.realized_at_risk.items()
            },
            "threshold_provenance": self.threshold_provenance,
        }
        return doc


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def require_id_only(val_records: RecordSet | Sequence[ScoredRecord]) -> None:
    """Thresholds are selected on in-distribution data only; refuse anything
    else."""
    items = (
        val_records.domain_tags()
        if isinstance(val_records, RecordSet)
        else [s.record.domain_tag for s in val_records]
    )
    bad = [t for t in items if t != "id"]
    if bad:
        raise ValueError(
            f"validation pool contains {len(bad)} non-ID records "
            f"(first tag {bad[0]!r}); thresholds must be chosen on ID data"
        )


def build_cell(
    method: str,
    alpha: float,
    scored_test: Sequence[ScoredRecord],
    val_scored: Sequence[ScoredRecord],
    risk_levels: Sequence[float],
    costs: Sequence[float],
) -> CellReport:
    """Assemble one cell: threshold-free metrics on the mixture, plus
    effective reliability and realized risk/coverage at thresholds chosen on
    the (ID-only) validation scores."""
    require_id_only(val_scored)
    records = [s.record for s in scored_test]
    tags = [r.domain_tag for r in records]
    n_ood = sum(1 for t in tags if t == "ood")
    n = len(records)

    phi: dict[float, float] = {}
    phi_thresholds: dict[float, float] = {}
    for cost in costs:
        policy = select_threshold_phi(val_scored, cost)
        phi_thresholds[cost] = policy.gamma
        phi[cost] = effective_reliability(
            records, decide_all(scored_test, policy), cost
        )

    realized_at_risk: dict[float, dict] = {}
    first_policy: ThresholdPolicy | None = None
    for level in risk_levels:
        policy = select_threshold_for_risk(val_scored, level)
        if first_policy is None:
            first_policy = policy
        decisions = decide_all(scored_test, policy)
        cov = coverage(decisions)
        try:
            rsk: float | None = risk(records, decisions)
        except ZeroCoverageError:
            rsk = None
        realized_at_risk[level] = {
            "gamma": _json_float(policy.gamma),
            "coverage": round(cov, 6),
            "risk": None if rsk is None else round(rsk, 6),
        }

    # the headline applied threshold is the first risk level's (if any);
    # otherwise the first cost's phi-optimal one
    if first_policy is None:
        first_policy = (
            select_threshold_phi(val_scored, costs[0])
            if costs
            else ThresholdPolicy(-math.inf)
        )
    decisions = decide_all(scored_test, first_policy)
    cov = coverage(decisions)
    try:
        realized_risk: float | None = risk(records, decisions)
    except ZeroCoverageError:
        realized_risk = None

    metrics = MetricsReport(
        curve=risk_coverage_curve(scored_test),
        c_at_r={float(lv): coverage_at_risk(scored_test, lv)[0] for lv in risk_levels},
        rc_auc=rc_auc(scored_test),
        phi=phi,
        realized=RealizedPoint(coverage=cov, risk=realized_risk),
        accuracy=float(np.mean([r.accuracy for r in records])),
        gamma=first_policy.gamma,
    )
    return CellReport(
        method=method,
        alpha=alpha,
        realized_alpha=(n - n_ood) / n if n else 0.0,
        n_records=n,
        n_id=n - n_ood,
        n_ood=n_ood,
        metrics=metrics,
        phi_thresholds=phi_thresholds,
        realized_at_risk=realized_at_risk,
        threshold_provenance={
            "source": "id-val",
            "n_val": len(val_scored),
            "non_id_val_records": 0,
        },
    )


# -- experiment ---------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: dict[tuple[str, float], CellReport]
    failures: dict[str, str]
    wall_clock_seconds: float = 0.0  # informational; excluded from emitted bytes

    def cell(self, method: str, alpha: float) -> CellReport:
        return self.cells[(method, alpha)]

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "cells": {
                cell_key(m, a): c.to_json_dict() for (m, a), c in self.cells.items()
            },
            "failures": dict(sorted(self.failures.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def cell_key(method: str, alpha: float) -> str:
    return f"{method}_{format(float(alpha), 'g')}"


@dataclass
class _MethodScores:
    """Scored validation and test pools for one method."""

    val: list[ScoredRecord]
    test_id: RecordSet
    test_ood: RecordSet
    scores_by_id: dict[str, float]


def _split_by_group(data: LabeledDataset, b_fraction: float, seed: int):
    """Group-respecting A/B split of a dataset; B gets ~b_fraction of groups."""
    distinct = sorted(set(data.groups))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(distinct))
    n_b = max(1, int(round(b_fraction * len(distinct))))
    b_groups = {distinct[j] for j in order[:n_b]}
    mask_b = np.array([g in b_groups for g in data.groups])
    return data.subset(~mask_b), data.subset(mask_b)


def _scored_from(records: RecordSet, scores_by_id: dict[str, float]) -> list[ScoredRecord]:
    return [ScoredRecord(record=r, score=scores_by_id[r.id]) for r in records]


class _SyntheticRunner:
    """Trains the base models and selectors the method grid needs, scoring
    the validation and test pools per method."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.data_train, self.data_val, self.data_test_id, self.data_test_ood = (
            generate_synthetic(config.synthetic)
        )
        self.n_classes = config.synthetic.n_classes
        self._contexts: dict[str, dict] = {}

    def _context(self, name: str) -> dict:
        """Model context: 'ab' trains on everything, 'a' on the A split."""
        if name in self._contexts:
            return self._contexts[name]
        cfg = self.config
        if name == "ab":
            train_data = self.data_train
            toy_cfg = cfg.toy_train
        else:
            a_data, b_data = _split_by_group(
                self.data_train, cfg.b_fraction, cfg.partition_seed + 7
            )
            train_data = a_data
            toy_cfg = replace(cfg.toy_train, seed=cfg.toy_train.seed + 1)
        model = train_toy_classifier(train_data, toy_cfg, n_classes=self.n_classes)
        ctx = {
            "model": model,
            "toy_cfg": toy_cfg,
            "train_data": train_data,
            "val": predict_records(model, self.data_val, "va"),
            "test_id": predict_records(model, self.data_test_id, "te"),
            "test_ood": predict_records(model, self.data_test_ood, "oo"),
        }
        if name == "a":
            ctx["b_data"] = b_data
        self._contexts[name] = ctx
        return ctx

    def _score_pools(self, ctx: dict, selector) -> _MethodScores:
        val_scored = score_all(selector, ctx["val"])
        sc_id = score_all(selector, ctx["test_id"])
        sc_ood = score_all(selector, ctx["test_ood"])
        by_id = {s.record.id: s.score for s in sc_id}
        by_id.update({s.record.id: s.score for s in sc_ood})
        return _MethodScores(
            val=val_scored,
            test_id=ctx["test_id"],
            test_ood=ctx["test_ood"],
            scores_by_id=by_id,
        )

    def method_scores(self, method: str) -> _MethodScores:
        cfg = self.config
        if method == "maxprob":
            return self._score_pools(self._context("ab"), MaxProbSelector())

        if method == "selector-self":
            ctx = self._context("ab")
            train_records = predict_records(ctx["model"], ctx["train_data"], "tr")
            selector = train_selector(train_records, ctx["val"], cfg.selector_train)
            return self._score_pools(ctx, selector)

        if method == "selector-lyp":
            ctx = self._context("ab")
            result = run_lyp_pipeline(
                ctx["train_data"],
                cfg.n_peers,
                ctx["toy_cfg"],
                self.n_classes,
                cfg.partition_seed,
                jobs=cfg.jobs,
            )
            selector = train_selector(
                result.selector_train_records(), ctx["val"], cfg.selector_train
            )
            return self._score_pools(ctx, selector)

        if method == "selector-heldout":
            ctx = self._context("a")
            b_records = predict_records(ctx["model"], ctx["b_data"], "tr")
            selector = train_selector(b_records, ctx["val"], cfg.selector_train)
            return self._score_pools(ctx, selector)

        if method == "selector-lyp-a-self-b":
            ctx = self._context("a")
            result = run_lyp_pipeline(
                ctx["train_data"],
                cfg.n_peers,
                ctx["toy_cfg"],
                self.n_classes,
                cfg.partition_seed + 1,
                jobs=cfg.jobs,
                peer_seed_base=ctx["toy_cfg"].seed + 2000,
            )
            lyp_side = result.selector_train_records()
            by_id = dict(zip(result.peer_labeled.records.ids(),
                             result.peer_labeled.peer_indices))
            labeled_a = PeerLabeledSet(
                records=lyp_side,
                peer_indices=tuple(by_id[i] for i in lyp_side.ids()),
            )
            b_records = predict_records(ctx["model"], ctx["b_data"], "tr")
            combined = lyp_a_self_b(labeled_a, b_records)
            selector = train_selector(combined.records, ctx["val"], cfg.selector_train)
            return self._score_pools(ctx, selector)

        raise ValueError(f"unknown method {method!r}")


class _FileRunner:
    """Scores user-supplied prediction records; the base model is implicit."""

    REQUIRED = ("train_a", "train_b", "val", "test", "ood")

    def __init__(self, config: ExperimentConfig):
        self.config = config
        files = config.files or {}
        missing = [k for k in self.REQUIRED if k not in files]
        if missing:
            raise ValueError(f"files data source missing {missing[0]!r}")
        self.train_a = load_records(files["train_a"])
        self.train_b = load_records(files["train_b"])
        self.val = load_records(files["val"])
        require_id_only(self.val)
        self.test_id = load_records(files["test"])
        self.test_ood = load_records(files["ood"])
        self.peer_labeled = (
            load_records(files["peer_labeled"]) if "peer_labeled" in files else None
        )

    def _score_pools(self, selector) -> _MethodScores:
        val_scored = score_all(selector, self.val)
        sc_id = score_all(selector, self.test_id)
        sc_ood = score_all(selector, self.test_ood)
        by_id = {s.record.id: s.score for s in sc_id}
        by_id.update({s.record.id: s.score for s in sc_ood})
        return _MethodScores(
            val=val_scored, test_id=self.test_id, test_ood=self.test_ood,
            scores_by_id=by_id,
        )

    def method_scores(self, method: str) -> _MethodScores:
        cfg = self.config
        if method == "maxprob":
            return self._score_pools(MaxProbSelector())
        if method == "selector-self":
            both = RecordSet(list(self.train_a) + list(self.train_b))
            return self._score_pools(
                train_selector(both, self.val, cfg.selector_train)
            )
        if method == "selector-heldout":
            return self._score_pools(
                train_selector(self.train_b, self.val, cfg.selector_train)
            )
        if method == "selector-lyp":
            if self.peer_labeled is None:
                raise ValueError(
                    "selector-lyp with file data needs a 'peer_labeled' records file"
                )
            return self._score_pools(
                train_selector(self.peer_labeled, self.val, cfg.selector_train)
            )
        if method == "selector-lyp-a-self-b":
            if self.peer_labeled is None:
                raise ValueError(
                    "selector-lyp-a-self-b with file data needs a 'peer_labeled' "
                    "records file covering the A split"
                )
            combined = RecordSet(list(self.peer_labeled) + list(self.train_b))
            return self._score_pools(
                train_selector(combined, self.val, cfg.selector_train)
            )
        raise ValueError(f"unknown method {method!r}")


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run the full method x mixture grid.

    Per method: score the ID validation pool and both test pools; choose all
    thresholds on validation only; evaluate each mixture. Per-cell failures
    are recorded and the run continues.
    """
    started = time.monotonic()
    runner = (
        _SyntheticRunner(config) if config.synthetic is not None
        else _FileRunner(config)
    )
    cells: dict[tuple[str, float], CellReport] = {}
    failures: dict[str, str] = {}
    for method in config.methods:
        try:
            scores = runner.method_scores(method)
        except Exception as exc:  # per-method failure poisons its row only
            for alpha in config.alphas:
                failures[cell_key(method, alpha)] = str(exc)
            continue
        for alpha in config.alphas:
            try:
                mixture = _build_alpha_mixture(config, scores, alpha)
                scored_mix = _scored_from(mixture, scores.scores_by_id)
                cells[(method, alpha)] = build_cell(
                    method, alpha, scored_mix, scores.val,
                    config.risk_levels, config.costs,
                )
            except Exception as exc:
                failures[cell_key(method, alpha)] = str(exc)
    return ExperimentReport(
        config=config,
        cells=cells,
        failures=failures,
        wall_clock_seconds=time.monotonic() - started,
    )


def _build_alpha_mixture(
    config: ExperimentConfig, scores: _MethodScores, alpha: float
) -> RecordSet:
    if alpha == 1.0:
        # pure ID evaluates the entire ID test pool, as in conventional
        # single-distribution tables
        return scores.test_id
    spec = MixtureSpec(alpha=alpha, ood_count=config.ood_count,
                       seed=config.mixture_seed)
    return build_mixture(scores.test_id, scores.test_ood, spec)


# -- emission --------------------------------------------------------------------


def emit_report(report: ExperimentReport, directory) -> list[Path]:
    """Write the JSON summary and one curve CSV per cell. Deterministic bytes
    for a given report; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    summary = directory / "report.json"
    summary.write_text(report.to_json(), encoding="utf-8")
    written.append(summary)
    for (method, alpha), cell in report.cells.items():
        path = directory / f"{cell_key(method, alpha)}.csv"
        path.write_text(cell.metrics.curve_csv(), encoding="utf-8")
        written.append(path)
    return written
