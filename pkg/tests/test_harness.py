import hashlib
import json
import math

import numpy as np
import pytest

from selpred.harness import (
    CellReport,
    ExperimentConfig,
    MixtureSpec,
    build_cell,
    build_mixture,
    cell_key,
    emit_report,
    load_experiment_config,
    require_id_only,
    run_experiment,
    run_lyp_pipeline,
)
from selpred.figures import render_figures
from selpred.metrics import ScoredRecord
from selpred.records import PredictionRecord, RecordSet
from selpred.selector import TrainConfig
from selpred.toymodel import (
    LabeledDataset,
    SyntheticTaskConfig,
    ToyTrainConfig,
    generate_synthetic,
)


def record(rec_id, domain_tag="id", accuracy=1.0, confidence=0.5):
    return PredictionRecord(
        id=rec_id, group=rec_id, features=(1.0,), confidence=confidence,
        accuracy=accuracy, domain_tag=domain_tag,
    )


def pool(prefix, n, domain_tag="id"):
    return RecordSet(record(f"{prefix}{i}", domain_tag) for i in range(n))


# -- mixtures ------------------------------------------------------------------

def test_mixture_id_counts():
    assert MixtureSpec(alpha=0.9, ood_count=500, seed=0).id_count == 4500
    assert MixtureSpec(alpha=0.5, ood_count=500, seed=0).id_count == 500
    assert MixtureSpec(alpha=1.0, ood_count=500, seed=0).id_count == 500
    assert MixtureSpec(alpha=0.0, ood_count=500, seed=0).id_count == 0


def test_mixture_alpha_validation():
    with pytest.raises(ValueError, match="alpha"):
        MixtureSpec(alpha=1.5, ood_count=10, seed=0)


def test_build_mixture_composition():
    ids = pool("i", 200)
    oods = pool("o", 60, "ood")
    spec = MixtureSpec(alpha=0.5, ood_count=50, seed=3)
    mix = build_mixture(ids, oods, spec)
    tags = mix.domain_tags()
    assert len(mix) == 100
    assert sum(1 for t in tags if t == "ood") == 50
    assert sum(1 for t in tags if t == "id") == 50


def test_build_mixture_alpha_one_pure_id():
    mix = build_mixture(pool("i", 30), pool("o", 10, "ood"),
                        MixtureSpec(alpha=1.0, ood_count=20, seed=0))
    assert len(mix) == 20
    assert all(t == "id" for t in mix.domain_tags())


def test_build_mixture_keeps_ood_fixed_across_alphas():
    ids, oods = pool("i", 300), pool("o", 40, "ood")
    mixes = [
        build_mixture(ids, oods, MixtureSpec(alpha=a, ood_count=30, seed=5))
        for a in (0.9, 0.5, 0.333)
    ]
    ood_ids = [
        sorted(r.id for r in m if r.domain_tag == "ood") for m in mixes
    ]
    assert ood_ids[0] == ood_ids[1] == ood_ids[2]


def test_build_mixture_deterministic():
    ids, oods = pool("i", 100), pool("o", 20, "ood")
    spec = MixtureSpec(alpha=0.8, ood_count=10, seed=9)
    a = build_mixture(ids, oods, spec)
    b = build_mixture(ids, oods, spec)
    assert a.ids() == b.ids()


def test_build_mixture_errors_name_the_pool():
    with pytest.raises(ValueError, match="ood pool"):
        build_mixture(pool("i", 100), pool("o", 5, "ood"),
                      MixtureSpec(alpha=0.5, ood_count=10, seed=0))
    with pytest.raises(ValueError, match="id pool"):
        build_mixture(pool("i", 5), pool("o", 50, "ood"),
                      MixtureSpec(alpha=0.9, ood_count=50, seed=0))
    with pytest.raises(ValueError, match="share id"):
        build_mixture(pool("x", 5), pool("x", 5, "ood"),
                      MixtureSpec(alpha=0.5, ood_count=2, seed=0))


# -- pipeline -------------------------------------------------------------------

def micro_task(**kw):
    base = dict(n_classes=3, dim=4, n_train=200, n_val=50, n_test_id=50,
                n_test_ood=50, seed=2)
    base.update(kw)
    return SyntheticTaskConfig(**base)


def micro_toy(**kw):
    base = dict(max_epochs=4, batch_size=64, hidden_dim=12, seed=0)
    base.update(kw)
    return ToyTrainConfig(**base)


def test_run_lyp_pipeline_covers_all_ids():
    train, _, _, _ = generate_synthetic(micro_task())
    result = run_lyp_pipeline(train, 2, micro_toy(), 3, partition_seed=0)
    assert len(result.peer_labeled) == 200
    assert result.peer_labeled.records.ids() == result.final_records.ids()
    # selector training set pairs final features with peer labels
    sel = result.selector_train_records()
    assert sel.ids() == result.final_records.ids()
    assert np.array_equal(
        sel.features_matrix(), result.final_records.features_matrix()
    )
    assert np.array_equal(
        sel.accuracies(), result.peer_labeled.records.accuracies()
    )


def test_run_lyp_pipeline_provenance_never_self():
    train, _, _, _ = generate_synthetic(micro_task())
    result = run_lyp_pipeline(train, 4, micro_toy(), 3, partition_seed=1)
    from selpred.peers import partition_group_keys
    part = partition_group_keys(train.groups, 4, 1)
    for rec, peer in zip(result.peer_labeled.records,
                         result.peer_labeled.peer_indices):
        assert peer == part.subset_of(rec.group)


def test_perfect_peers_give_all_ones():
    # wide-margin separable task with no label noise
    rng = np.random.default_rng(0)
    n = 200
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 2)) * 0.1 + np.where(y[:, None] == 1, 4.0, -4.0)
    groups = tuple(f"g{i // 5}" for i in range(n))
    train = LabeledDataset(x, y, groups, np.zeros(n, bool), "id", np.arange(n))
    result = run_lyp_pipeline(
        train, 2, micro_toy(max_epochs=20, batch_size=32), 2, partition_seed=0
    )
    labels = result.peer_labeled.records.accuracies()
    assert labels.mean() > 0.99


def test_peer_labels_chance_on_hard_near_one_on_easy():
    cfg = micro_task(n_train=4000, hard_fraction=0.3, n_classes=4, dim=8)
    train, _, _, _ = generate_synthetic(cfg)
    result = run_lyp_pipeline(
        train, 2, micro_toy(max_epochs=10, hidden_dim=24), 4, partition_seed=0
    )
    xi = result.peer_labeled.records.accuracies()
    hard_mean = xi[train.hard].mean()
    easy_mean = xi[~train.hard].mean()
    assert hard_mean < 0.45  # chance is 0.25
    assert easy_mean > 0.75


def test_run_lyp_pipeline_jobs_equivalence():
    train, _, _, _ = generate_synthetic(micro_task())
    serial = run_lyp_pipeline(train, 2, micro_toy(), 3, partition_seed=3, jobs=1)
    parallel = run_lyp_pipeline(train, 2, micro_toy(), 3, partition_seed=3, jobs=2)
    assert np.array_equal(
        serial.peer_labeled.records.accuracies(),
        parallel.peer_labeled.records.accuracies(),
    )
    assert np.array_equal(
        serial.final_records.features_matrix(),
        parallel.final_records.features_matrix(),
    )


# -- cell assembly -----------------------------------------------------------------

def oracle_scored(accuracies, domain_tag="id"):
    recs = [
        record(f"r{i}", domain_tag=domain_tag, accuracy=a)
        for i, a in enumerate(accuracies)
    ]
    return [ScoredRecord(record=r, score=r.accuracy) for r in recs]


def test_build_cell_oracle_c_at_zero():
    accs = [1.0, 1.0, 0.7, 0.0, 1.0, 0.3]
    cell = build_cell("maxprob", 1.0, oracle_scored(accs), oracle_scored(accs),
                      risk_levels=[0.0], costs=[1.0])
    assert cell.metrics.c_at_r[0.0] == pytest.approx(3 / 6)


def test_build_cell_rejects_ood_validation():
    test = oracle_scored([1.0, 0.5])
    val = oracle_scored([1.0], domain_tag="ood")
    with pytest.raises(ValueError, match="ID data"):
        build_cell("maxprob", 1.0, test, val, [0.01], [1.0])


def test_require_id_only_passes_clean_pool():
    require_id_only(pool("v", 5))
    with pytest.raises(ValueError, match="non-ID"):
        require_id_only(pool("v", 5, domain_tag="ood"))


# -- experiments ---------------------------------------------------------------------

def micro_experiment(methods=("maxprob",), alphas=(1.0,), **kw):
    base = dict(
        seed=0,
        output_dir="unused",
        methods=methods,
        alphas=alphas,
        ood_count=20,
        risk_levels=(0.01, 0.05, 0.10),
        costs=(1.0,),
        n_peers=2,
        synthetic=micro_task(),
        toy_train=micro_toy(),
        selector_train=TrainConfig(max_epochs=3, hidden_dim=8, batch_size=64,
                                   patience=2, seed=0),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_single_cell():
    report = run_experiment(micro_experiment())
    assert set(report.cells) == {("maxprob", 1.0)}
    assert report.failures == {}
    cell = report.cell("maxprob", 1.0)
    assert cell.n_records == 50
    assert cell.n_ood == 0


def test_run_experiment_full_grid_cells_present():
    methods = ("maxprob", "selector-self", "selector-heldout", "selector-lyp")
    alphas = (1.0, 0.9, 0.5, 0.333)
    report = run_experiment(
        micro_experiment(methods=methods, alphas=alphas, ood_count=5)
    )
    assert report.failures == {}
    assert len(report.cells) == 16
    for m in methods:
        for a in alphas:
            assert (m, a) in report.cells


def test_run_experiment_mixture_composition():
    report = run_experiment(micro_experiment(alphas=(0.5,)))
    cell = report.cell("maxprob", 0.5)
    assert cell.n_ood == 20
    assert cell.n_id == 20
    assert cell.realized_alpha == 0.5


def test_run_experiment_records_failures_and_continues():
    # ood_count larger than the ood pool: mixture cells fail, alpha=1 survives
    report = run_experiment(micro_experiment(alphas=(1.0, 0.5), ood_count=500))
    assert ("maxprob", 1.0) in report.cells
    assert cell_key("maxprob", 0.5) in report.failures
    assert "ood pool" in report.failures[cell_key("maxprob", 0.5)]


def test_run_experiment_lyp_a_self_b_runs():
    report = run_experiment(
        micro_experiment(methods=("selector-lyp-a-self-b",), alphas=(1.0,))
    )
    assert report.failures == {}
    assert ("selector-lyp-a-self-b", 1.0) in report.cells


# -- emission ---------------------------------------------------------------------------

def test_emit_report_empty(tmp_path):
    report = run_experiment(micro_experiment())
    report.cells = {}
    out = emit_report(report, tmp_path / "empty")
    assert [p.name for p in out] == ["report.json"]
    doc = json.loads(out[0].read_text())
    assert doc["cells"] == {}


def test_emit_report_one_cell_exactly_two_files(tmp_path):
    report = run_experiment(micro_experiment())
    out = emit_report(report, tmp_path / "one")
    assert len(out) == 2
    names = sorted(p.name for p in out)
    assert names == ["maxprob_1.csv", "report.json"]


def test_emit_report_byte_identical_re_emission(tmp_path):
    report = run_experiment(micro_experiment(alphas=(1.0, 0.5)))
    first = emit_report(report, tmp_path / "a")
    second = emit_report(report, tmp_path / "b")
    for pa, pb in zip(first, second):
        assert pa.read_bytes() == pb.read_bytes()


def test_report_json_excludes_wall_clock(tmp_path):
    report = run_experiment(micro_experiment())
    assert report.wall_clock_seconds > 0
    doc = report.to_json_dict()
    assert "wall_clock" not in json.dumps(doc)


def test_experiment_determinism_byte_identical(tmp_path):
    cfg = micro_experiment(methods=("maxprob", "selector-lyp"), alphas=(1.0, 0.5))
    paths_a = emit_report(run_experiment(cfg), tmp_path / "runA")
    paths_b = emit_report(run_experiment(cfg), tmp_path / "runB")
    for pa, pb in zip(paths_a, paths_b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_render_figures_deterministic(tmp_path):
    report = run_experiment(
        micro_experiment(methods=("maxprob", "selector-self"), alphas=(1.0, 0.5))
    )
    first = render_figures(report, tmp_path / "f1")
    second = render_figures(report, tmp_path / "f2")
    assert [p.name for p in first] == [p.name for p in second]
    assert len(first) >= 3
    for pa, pb in zip(first, second):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


# -- config files --------------------------------------------------------------------------

def test_load_experiment_config_resolves_paths(tmp_path):
    cfg_doc = {
        "seed": 1,
        "output_dir": "out",
        "methods": ["maxprob"],
        "alphas": [1.0],
        "ood_count": 5,
        "data": {"files": {
            "train_a": "a.jsonl", "train_b": "b.jsonl", "val": "val.jsonl",
            "test": "test.jsonl", "ood": "ood.jsonl",
        }},
    }
    path = tmp_path / "sub" / "config.json"
    path.parent.mkdir()
    path.write_text(json.dumps(cfg_doc))
    cfg = load_experiment_config(path)
    assert cfg.files["train_a"].endswith("sub/a.jsonl")
    assert cfg.seed == 1
    assert cfg.partition_seed == 12  # seed + 11


def test_config_validation():
    with pytest.raises(ValueError, match="method"):
        micro_experiment(methods=("bogus",))
    with pytest.raises(ValueError, match="alpha"):
        micro_experiment(alphas=(2.0,))
    with pytest.raises(ValueError, match="data source"):
        ExperimentConfig(methods=("maxprob",), alphas=(1.0,), synthetic=None,
                         files=None)


def test_file_mode_experiment(tmp_path):
    # build record files from a micro synthetic run, then drive the file path
    from selpred.records import save_records
    from selpred.toymodel import predict_records, train_toy_classifier

    task = micro_task()
    train, val, test_id, test_ood = generate_synthetic(task)
    model = train_toy_classifier(train, micro_toy(), n_classes=3)
    files = {}
    a_recs = predict_records(model, train.subset(np.arange(len(train)) < 150), "tr")
    b_recs = predict_records(model, train.subset(np.arange(len(train)) >= 150), "tr")
    for name, recs in [
        ("train_a", a_recs),
        ("train_b", b_recs),
        ("val", predict_records(model, val, "va")),
        ("test", predict_records(model, test_id, "te")),
        ("ood", predict_records(model, test_ood, "oo")),
    ]:
        p = tmp_path / f"{name}.jsonl"
        save_records(recs, p)
        files[name] = str(p)

    cfg = micro_experiment(
        methods=("maxprob", "selector-self", "selector-heldout", "selector-lyp"),
        alphas=(1.0, 0.5),
        synthetic=None,
        files=files,
    )
    report = run_experiment(cfg)
    # lyp needs a peer_labeled file in file mode: its cells fail, named
    assert cell_key("selector-lyp", 1.0) in report.failures
    assert "peer_labeled" in report.failures[cell_key("selector-lyp", 1.0)]
    assert ("maxprob", 1.0) in report.cells
    assert ("selector-self", 0.5) in report.cells
    assert ("selector-heldout", 1.0) in report.cells
