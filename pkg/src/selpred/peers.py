"""Peer-labeling data flow: group-respecting partitions, leave-one-out split
construction, and recombination of heldout peer predictions into a single
relabeled training set.

The scheme: split the training data into N disjoint subsets (never splitting
a group key, the analog of an image id), train one model per subset on the
other N-1 subsets, have it predict on the subset it never saw, and collect
those correctness labels. A selector trained against them learns which
examples this model class fails to generalize to, instead of trusting the
final model's opinion of its own training data.

This module owns only the data contracts; model training is delegated to the
harness (or to an external system exchanging record files).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .records import PredictionRecord, RecordError, RecordSet

__all__ = [
    "Partition",
    "PeerLabeledSet",
    "TaggedRecordSet",
    "partition_by_group",
    "partition_group_keys",
    "leave_one_out",
    "recombine_peer_labels",
    "with_peer_labels",
    "lyp_a_self_b",
    "augment_known_ood",
    "save_partition",
    "load_partition",
]


@dataclass(frozen=True)
class Partition:
    """Assignment of every group key to one of ``n_subsets`` disjoint subsets."""

    n_subsets: int
    assignment: dict[str, int]
    seed: int

    def __post_init__(self):
        if self.n_subsets < 2:
            raise ValueError("a partition needs at least 2 subsets")
        for group, idx in self.assignment.items():
            if not 0 <= idx < self.n_subsets:
                raise ValueError(
                    f"group {group!r} assigned to subset {idx}, "
                    f"valid range is [0, {self.n_subsets})"
                )

    def subset_of(self, group: str) -> int:
        return self.assignment[group]

    def groups_in(self, n: int) -> list[str]:
        return [g for g, i in self.assignment.items() if i == n]


@dataclass(frozen=True)
class PeerLabeledSet:
    """Records whose accuracy holds the heldout peer label, with per-record
    provenance (the index of the peer that produced the label)."""

    records: RecordSet
    peer_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.records) != len(self.peer_indices):
            raise ValueError("one peer index per record required")

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TaggedRecordSet:
    """Records plus a per-record provenance tag (the record schema itself has
    no provenance field)."""

    records: RecordSet
    provenance: tuple[str, ...]

    def __post_init__(self):
        if len(self.records) != len(self.provenance):
            raise ValueError("one provenance tag per record required")


def partition_group_keys(groups: Iterable[str], n_subsets: int, seed: int) -> Partition:
    """Deterministic assignment: sort the distinct group keys, shuffle with a
    seeded rng, deal round-robin. Subset sizes differ by at most one group."""
    distinct = sorted(set(groups))
    if n_subsets < 2:
        raise ValueError("n_subsets must be >= 2")
    if len(distinct) < n_subsets:
        raise ValueError(
            f"cannot split {len(distinct)} groups into {n_subsets} subsets"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(distinct))
    assignment = {distinct[j]: int(pos % n_subsets) for pos, j in enumerate(order)}
    return Partition(n_subsets=n_subsets, assignment=assignment, seed=seed)


def partition_by_group(records: RecordSet, n_subsets: int, seed: int) -> Partition:
    return partition_group_keys(records.groups(), n_subsets, seed)


def leave_one_out(
    records: RecordSet, partition: Partition, n: int
) -> tuple[RecordSet, RecordSet]:
    """Split into (train, heldout): heldout is every record whose group maps
    to subset ``n``, train is the complement. Order is preserved."""
    if not 0 <= n < partition.n_subsets:
        raise ValueError(f"subset index {n} out of range [0, {partition.n_subsets})")
    train, heldout = [], []
    for rec in records:
        if partition.subset_of(rec.group) == n:
            heldout.append(rec)
        else:
            train.append(rec)
    return RecordSet(train), RecordSet(heldout)


def recombine_peer_labels(
    original: RecordSet, heldout_predictions: Sequence[RecordSet]
) -> PeerLabeledSet:
    """Union the per-peer heldout prediction sets into one labeled set.

    The parts must be pairwise id-disjoint and together cover exactly the
    ids of ``original``; the result restores the original order. Each output
    record keeps the peer's prediction (its accuracy is the peer label) and
    carries the peer index as provenance.
    """
    if len(heldout_predictions) < 2:
        raise ValueError("need at least 2 peer prediction sets")
    located: dict[str, tuple[int, PredictionRecord]] = {}
    for peer_idx, part in enumerate(heldout_predictions):
        for rec in part:
            if rec.id in located:
                raise RecordError(
                    f"id {rec.id!r} appears in peer sets "
                    f"{located[rec.id][0]} and {peer_idx}"
                )
            located[rec.id] = (peer_idx, rec)
    missing = [i for i in original.ids() if i not in located]
    if missing:
        raise RecordError(f"peer predictions missing id {missing[0]!r}")
    extra = set(located) - set(original.ids())
    if extra:
        raise RecordError(f"peer predictions cover unknown id {sorted(extra)[0]!r}")
    ordered = [located[i] for i in original.ids()]
    return PeerLabeledSet(
        records=RecordSet(rec for _, rec in ordered),
        peer_indices=tuple(idx for idx, _ in ordered),
    )


def with_peer_labels(records: RecordSet, peer_labeled: PeerLabeledSet) -> RecordSet:
    """Copy ``records`` with each accuracy replaced by the peer label of the
    same id. This pairs the final model's features with heldout correctness
    targets for selector training."""
    labels = {rec.id: rec.accuracy for rec in peer_labeled.records}
    missing = [rec.id for rec in records if rec.id not in labels]
    if missing:
        raise RecordError(f"no peer label for id {missing[0]!r}")
    return RecordSet(rec.replace(accuracy=labels[rec.id]) for rec in records)


def lyp_a_self_b(
    peer_labeled_a: PeerLabeledSet, self_labeled_b: RecordSet
) -> TaggedRecordSet:
    """Concatenate peer-labeled records (tag "lyp") with self-labeled records
    (tag "self"), each side keeping its own labels. Inputs must be id-disjoint."""
    a = peer_labeled_a.records
    collisions = [rec.id for rec in self_labeled_b if rec.id in a]
    if collisions:
        raise RecordError(f"id {collisions[0]!r} present on both sides")
    combined = RecordSet(list(a) + list(self_labeled_b))
    tags = ("lyp",) * len(a) + ("self",) * len(self_labeled_b)
    return TaggedRecordSet(records=combined, provenance=tags)


def augment_known_ood(selector_train: RecordSet, known_ood: RecordSet) -> RecordSet:
    """Append known-OOD training records (their domain tags intact) to the
    selector training set."""
    if len(known_ood) == 0:
        return selector_train
    if len(selector_train) and selector_train.dim != known_ood.dim:
        raise RecordError(
            f"feature dimension mismatch: {selector_train.dim} vs {known_ood.dim}"
        )
    collisions = [rec.id for rec in known_ood if rec.id in selector_train]
    if collisions:
        raise RecordError(f"id {collisions[0]!r} already in the training set")
    return RecordSet(list(selector_train) + list(known_ood))


# -- partition manifest ------------------------------------------------------

def save_partition(partition: Partition, path) -> None:
    doc = {
        "n_subsets": partition.n_subsets,
        "seed": partition.seed,
        "assignment": dict(sorted(partition.assignment.items())),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_partition(path) -> Partition:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return Partition(
        n_subsets=int(doc["n_subsets"]),
        assignment={str(k): int(v) for k, v in doc["assignment"].items()},
        seed=int(doc["seed"]),
    )
