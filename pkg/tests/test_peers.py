import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selpred.peers import (
    Partition,
    PeerLabeledSet,
    augment_known_ood,
    leave_one_out,
    load_partition,
    lyp_a_self_b,
    partition_by_group,
    recombine_peer_labels,
    save_partition,
    with_peer_labels,
)
from selpred.records import (
    PredictionRecord,
    RecordError,
    RecordSet,
    dumps_records,
    parse_records,
)


def record(rec_id, group, accuracy=1.0, domain_tag="id", features=(1.0, 2.0)):
    return PredictionRecord(
        id=rec_id, group=group, features=features, confidence=0.5,
        accuracy=accuracy, domain_tag=domain_tag,
    )


def grouped_records(n_groups, per_group=2):
    recs = []
    for g in range(n_groups):
        for j in range(per_group):
            recs.append(record(f"g{g}-r{j}", f"g{g}"))
    return RecordSet(recs)


# -- partitioning -------------------------------------------------------------

def test_partition_four_groups_two_subsets():
    rs = grouped_records(4)
    part = partition_by_group(rs, 2, seed=0)
    sizes = [len(part.groups_in(i)) for i in range(2)]
    assert sizes == [2, 2]
    assert set(part.assignment) == {"g0", "g1", "g2", "g3"}


def test_partition_singletons_when_n_equals_groups():
    rs = grouped_records(5)
    part = partition_by_group(rs, 5, seed=1)
    assert sorted(len(part.groups_in(i)) for i in range(5)) == [1] * 5


def test_partition_determinism_and_seed_sensitivity():
    rs = grouped_records(30)
    a = partition_by_group(rs, 4, seed=3)
    b = partition_by_group(rs, 4, seed=3)
    c = partition_by_group(rs, 4, seed=4)
    assert a.assignment == b.assignment
    assert a.assignment != c.assignment
    profile = lambda p: sorted(len(p.groups_in(i)) for i in range(4))
    assert profile(a) == profile(c)


def test_partition_errors():
    rs = grouped_records(3)
    with pytest.raises(ValueError, match="3 groups"):
        partition_by_group(rs, 4, seed=0)
    with pytest.raises(ValueError, match=">= 2"):
        partition_by_group(rs, 1, seed=0)


@settings(max_examples=60, deadline=None)
@given(
    n_groups=st.integers(2, 20),
    n_subsets=st.integers(2, 6),
    seed=st.integers(0, 10_000),
)
def test_partition_properties(n_groups, n_subsets, seed):
    if n_groups < n_subsets:
        n_groups = n_subsets
    rs = grouped_records(n_groups)
    part = partition_by_group(rs, n_subsets, seed)
    # every group assigned exactly once, all subsets nonempty, balance <= 1
    assert set(part.assignment) == set(rs.groups())
    sizes = [len(part.groups_in(i)) for i in range(n_subsets)]
    assert all(s >= 1 for s in sizes)
    assert max(sizes) - min(sizes) <= 1


# -- leave one out ---------------------------------------------------------------

def test_leave_one_out_complement_symmetry():
    rs = grouped_records(6)
    part = partition_by_group(rs, 2, seed=0)
    train0, held0 = leave_one_out(rs, part, 0)
    train1, held1 = leave_one_out(rs, part, 1)
    assert train0.ids() == held1.ids()
    assert train1.ids() == held0.ids()


def test_leave_one_out_counts_and_disjointness():
    rs = grouped_records(9, per_group=3)
    part = partition_by_group(rs, 3, seed=5)
    for n in range(3):
        train, held = leave_one_out(rs, part, n)
        assert len(train) + len(held) == len(rs)
        assert not set(train.ids()) & set(held.ids())


def test_leave_one_out_invalid_subset():
    rs = grouped_records(4)
    part = partition_by_group(rs, 2, seed=0)
    with pytest.raises(ValueError, match="out of range"):
        leave_one_out(rs, part, 2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n_subsets=st.integers(2, 5))
def test_leave_one_out_never_splits_groups(seed, n_subsets):
    rng = np.random.default_rng(seed)
    groups = [f"g{rng.integers(0, 12)}" for _ in range(30)]
    rs = RecordSet(record(f"r{i}", g) for i, g in enumerate(groups))
    distinct = len(set(groups))
    if distinct < n_subsets:
        n_subsets = 2
    if distinct < 2:
        return
    part = partition_by_group(rs, n_subsets, seed)
    for n in range(n_subsets):
        train, held = leave_one_out(rs, part, n)
        assert not set(train.groups()) & set(held.groups())


# -- recombination ------------------------------------------------------------------

def test_recombine_identity_relabel():
    rs = grouped_records(4)
    part = partition_by_group(rs, 2, seed=0)
    parts = [leave_one_out(rs, part, n)[1] for n in range(2)]
    combined = recombine_peer_labels(rs, parts)
    assert combined.records == rs
    # provenance matches the partition of each record's group
    for rec, peer in zip(combined.records, combined.peer_indices):
        assert peer == part.subset_of(rec.group)


def test_recombine_two_peer_fixture():
    original = RecordSet([record("a", "g1"), record("b", "g1"), record("c", "g2")])
    part_a = RecordSet([record("a", "g1", accuracy=0.0),
                        record("b", "g1", accuracy=0.5)])
    part_b = RecordSet([record("c", "g2", accuracy=1.0)])
    combined = recombine_peer_labels(original, [part_a, part_b])
    assert len(combined) == 3
    assert combined.records.ids() == ("a", "b", "c")
    assert combined.peer_indices == (0, 0, 1)
    assert combined.records.accuracies().tolist() == [0.0, 0.5, 1.0]


def test_recombine_rejects_single_part():
    rs = grouped_records(2)
    with pytest.raises(ValueError, match="at least 2"):
        recombine_peer_labels(rs, [rs])


def test_recombine_names_missing_and_duplicate_ids():
    original = RecordSet([record("a", "g1"), record("b", "g2")])
    with pytest.raises(RecordError, match="'b'"):
        recombine_peer_labels(
            original, [RecordSet([record("a", "g1")]), RecordSet([])]
        )
    with pytest.raises(RecordError, match="'a'"):
        recombine_peer_labels(
            original,
            [RecordSet([record("a", "g1")]),
             RecordSet([record("a", "g1"), record("b", "g2")])],
        )


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_recombine_is_bijection_on_ids(seed):
    rng = np.random.default_rng(seed)
    n_groups = int(rng.integers(3, 15))
    rs = grouped_records(n_groups)
    n_subsets = int(rng.integers(2, min(n_groups, 5) + 1))
    part = partition_by_group(rs, n_subsets, seed)
    parts = []
    for n in range(n_subsets):
        _, held = leave_one_out(rs, part, n)
        parts.append(RecordSet(r.replace(accuracy=float(rng.random())) for r in held))
    combined = recombine_peer_labels(rs, parts)
    assert combined.records.ids() == rs.ids()
    assert sorted(combined.records.ids()) == sorted(
        i for p in parts for i in p.ids()
    )


def test_with_peer_labels_swaps_accuracy_only():
    rs = RecordSet([record("a", "g1", accuracy=1.0), record("b", "g2", accuracy=1.0)])
    labeled = PeerLabeledSet(
        records=RecordSet([record("b", "g2", accuracy=0.25),
                           record("a", "g1", accuracy=0.75)]),
        peer_indices=(1, 0),
    )
    out = with_peer_labels(rs, labeled)
    assert out.ids() == ("a", "b")
    assert out.accuracies().tolist() == [0.75, 0.25]
    assert np.array_equal(out[0].features, rs[0].features)


# -- combination strategies ------------------------------------------------------------

def test_lyp_a_self_b_fixture():
    a_set = PeerLabeledSet(
        records=RecordSet([record(f"a{i}", f"ga{i}") for i in range(3)]),
        peer_indices=(0, 1, 0),
    )
    b_set = RecordSet([record(f"b{i}", f"gb{i}") for i in range(2)])
    combined = lyp_a_self_b(a_set, b_set)
    assert len(combined.records) == 5
    assert combined.provenance == ("lyp",) * 3 + ("self",) * 2


def test_lyp_a_self_b_empty_sides():
    a_set = PeerLabeledSet(
        records=RecordSet([record("a", "g")]), peer_indices=(0,)
    )
    empty = RecordSet([])
    out = lyp_a_self_b(a_set, empty)
    assert out.records == a_set.records

    empty_a = PeerLabeledSet(records=RecordSet([]), peer_indices=())
    b = RecordSet([record("b", "g2")])
    assert lyp_a_self_b(empty_a, b).records == b


def test_lyp_a_self_b_id_collision():
    a_set = PeerLabeledSet(
        records=RecordSet([record("x", "g")]), peer_indices=(0,)
    )
    with pytest.raises(RecordError, match="'x'"):
        lyp_a_self_b(a_set, RecordSet([record("x", "g")]))


def test_augment_known_ood():
    base = RecordSet([record(f"r{i}", f"g{i}") for i in range(10)])
    ood = RecordSet(
        record(f"o{i}", f"og{i}", domain_tag="vizwiz") for i in range(5)
    )
    out = augment_known_ood(base, ood)
    assert len(out) == 15
    assert out.domain_tags()[-5:] == ("vizwiz",) * 5
    assert augment_known_ood(base, RecordSet([])) == base


def test_augment_known_ood_errors():
    base = RecordSet([record("r0", "g0")])
    with pytest.raises(RecordError, match="dimension"):
        augment_known_ood(base, RecordSet([record("o0", "g", features=(1.0,))]))
    with pytest.raises(RecordError, match="'r0'"):
        augment_known_ood(base, RecordSet([record("r0", "g")]))


def test_mixed_tags_survive_serialization():
    base = RecordSet([record("r0", "g0")])
    ood = RecordSet([record("o0", "og", domain_tag="okvqa")])
    out = augment_known_ood(base, ood)
    parsed = parse_records(dumps_records(out))
    assert parsed.domain_tags() == ("id", "okvqa")


# -- manifest ---------------------------------------------------------------------------

def test_partition_manifest_round_trip(tmp_path):
    part = partition_by_group(grouped_records(7), 3, seed=9)
    path = tmp_path / "partition.json"
    save_partition(part, path)
    loaded = load_partition(path)
    assert loaded == part
