import math

import numpy as np
import pytest

from selpred.metrics import rc_auc
from selpred.optim import clip_global_norm, global_norm
from selpred.records import PredictionRecord, RecordSet
from selpred.selector import (
    MaxProbSelector,
    MlpSelector,
    TrainConfig,
    load_selector,
    loss_and_grad,
    maxprob_score,
    mlp_forward,
    save_selector,
    score_all,
    train_selector,
)
from selpred.toymodel import finite_diff_gradcheck


def record(rec_id, features, confidence=0.5, accuracy=1.0, group=None):
    return PredictionRecord(
        id=rec_id, group=group or rec_id, features=features,
        confidence=confidence, accuracy=accuracy,
    )


def random_model(rng, d_in, d_h, dropout=0.0):
    return MlpSelector(
        W1=rng.normal(size=(d_h, d_in)),
        b1=rng.normal(size=d_h),
        W2=rng.normal(size=d_h),
        b2=float(rng.normal()),
        dropout_rate=dropout,
    )


# -- forward pass ------------------------------------------------------------

def test_maxprob_is_identity_on_confidence():
    for c in (0.73, 1.0, 0.0):
        assert maxprob_score(record("a", (0.0,), confidence=c)) == c


def test_mlp_forward_zero_params():
    model = MlpSelector(W1=np.zeros((3, 2)), b1=np.zeros(3), W2=np.zeros(3), b2=0.0)
    assert mlp_forward(model, np.array([5.0, -2.0])) == 0.5


def test_mlp_forward_hand_example():
    model = MlpSelector(W1=[[1.0]], b1=[0.0], W2=[2.0], b2=0.0)
    assert mlp_forward(model, [1.0]) == pytest.approx(0.8807970779778823)


def test_mlp_forward_eval_mode_ignores_rng():
    rng = np.random.default_rng(0)
    model = random_model(rng, 4, 6, dropout=0.5)
    x = rng.normal(size=4)
    a = mlp_forward(model, x, train_mode=False, rng=np.random.default_rng(1))
    b = mlp_forward(model, x, train_mode=False, rng=np.random.default_rng(2))
    assert a == b


def test_mlp_forward_output_in_open_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(50):
        model = random_model(rng, 5, 7)
        out = mlp_forward(model, 100.0 * rng.normal(size=5))
        assert 0.0 < out < 1.0


def test_mlp_forward_dimension_mismatch():
    model = MlpSelector(W1=np.zeros((3, 2)), b1=np.zeros(3), W2=np.zeros(3), b2=0.0)
    with pytest.raises(ValueError, match="dimension"):
        mlp_forward(model, np.zeros(5))


# -- loss and gradients --------------------------------------------------------

def test_loss_zero_at_perfect_fit():
    model = MlpSelector(W1=np.zeros((2, 2)), b1=np.zeros(2), W2=np.zeros(2), b2=0.0)
    # outputs are exactly 0.5 everywhere; targets 0.5 -> zero loss
    loss, grads = loss_and_grad(model, np.ones((4, 2)), np.full(4, 0.5))
    assert loss == 0.0
    for g in grads:
        assert np.all(g == 0.0)


def test_loss_duplication_invariance():
    rng = np.random.default_rng(4)
    model = random_model(rng, 3, 5)
    x = rng.normal(size=(6, 3))
    t = rng.random(6)
    loss1, grads1 = loss_and_grad(model, x, t)
    loss2, grads2 = loss_and_grad(model, np.vstack([x, x]), np.concatenate([t, t]))
    assert loss1 == pytest.approx(loss2)
    for a, b in zip(grads1, grads2):
        assert np.allclose(a, b, atol=1e-14)


def test_loss_rejects_empty_batch_and_bad_targets():
    model = MlpSelector(W1=np.zeros((2, 2)), b1=np.zeros(2), W2=np.zeros(2), b2=0.0)
    with pytest.raises(ValueError, match="empty"):
        loss_and_grad(model, np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError, match="targets"):
        loss_and_grad(model, np.zeros((1, 2)), np.array([1.5]))


def _flatten_params(model):
    return np.concatenate(
        [model.W1.ravel(), model.b1, model.W2, [model.b2]]
    )


def _model_from_flat(theta, d_in, d_h):
    w1 = theta[: d_h * d_in].reshape(d_h, d_in)
    b1 = theta[d_h * d_in: d_h * d_in + d_h]
    w2 = theta[d_h * d_in + d_h: d_h * d_in + 2 * d_h]
    b2 = theta[-1]
    return MlpSelector(W1=w1, b1=b1, W2=w2, b2=float(b2), dropout_rate=0.0)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(25):
        d_in = int(rng.integers(1, 9))
        d_h = int(rng.integers(1, 9))
        n = int(rng.integers(1, 6))
        x = rng.normal(size=(n, d_in))
        t = rng.random(n)
        theta0 = _flatten_params(random_model(rng, d_in, d_h))

        def fn(theta):
            model = _model_from_flat(theta, d_in, d_h)
            loss, grads = loss_and_grad(model, x, t)
            flat = np.concatenate([g.ravel() for g in grads])
            return loss, flat

        assert finite_diff_gradcheck(fn, theta0, eps=1e-5) < 1e-4


# -- clipping -------------------------------------------------------------------

def test_clip_global_norm_bounds_norm():
    rng = np.random.default_rng(6)
    grads = [rng.normal(size=(4, 3)) * 10, rng.normal(size=7) * 10]
    clipped = clip_global_norm(grads, 1.0)
    assert global_norm(clipped) <= 1.0 + 1e-9
    small = [np.full(3, 1e-3)]
    assert clip_global_norm(small, 1.0)[0] is small[0]


# -- training ---------------------------------------------------------------------

def make_records(x, accs, confidences=None):
    confidences = confidences if confidences is not None else np.full(len(x), 0.5)
    return RecordSet(
        record(f"r{i}", x[i], confidence=float(confidences[i]), accuracy=float(accs[i]))
        for i in range(len(x))
    )


def small_config(**kw):
    base = dict(learning_rate=3e-3, batch_size=64, max_epochs=8, patience=3,
                seed=0, hidden_dim=16, dropout_rate=0.1)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_bitwise_deterministic():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(200, 4))
    accs = (x[:, 0] > 0).astype(float)
    train = make_records(x, accs)
    val = make_records(x[:50], accs[:50])
    m1 = train_selector(train, val, small_config())
    m2 = train_selector(train, val, small_config())
    assert np.array_equal(m1.W1, m2.W1)
    assert np.array_equal(m1.b1, m2.b1)
    assert np.array_equal(m1.W2, m2.W2)
    assert m1.b2 == m2.b2


def test_patience_zero_single_epoch():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(40, 3))
    train = make_records(x, np.ones(40))
    model = train_selector(train, train, small_config(patience=0, max_epochs=1))
    assert model.history["epochs_run"] == 1


def test_constant_targets_give_zero_val_auc():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(100, 3))
    train = make_records(x, np.ones(100))
    val = make_records(rng.normal(size=(30, 3)), np.ones(30))
    model = train_selector(train, val, small_config())
    assert model.history["best_val_rc_auc"] == 0.0
    scores = [mlp_forward(model, xi) for xi in x[:10]]
    assert np.std(scores) < 0.25  # outputs near-constant


def test_learned_selector_beats_uninformative_confidence():
    rng = np.random.default_rng(10)
    n = 2000
    x = rng.normal(size=(n, 4))
    accs = (x[:, 0] > 0).astype(float)  # correctness separable from feature 0
    conf = rng.random(n)                # confidence is pure noise
    train = make_records(x[:1600], accs[:1600], conf[:1600])
    val = make_records(x[1600:], accs[1600:], conf[1600:])
    model = train_selector(train, val, small_config(max_epochs=16))

    mlp_auc = rc_auc(score_all(model, val))
    maxprob_auc = rc_auc(score_all(MaxProbSelector(), val))
    assert mlp_auc < maxprob_auc


def test_divergence_reports_epoch(monkeypatch):
    from selpred import selector as selector_mod
    from selpred.selector import TrainingDiverged

    def poisoned(model, features, targets, rng=None, train_mode=False):
        zeros = [np.zeros_like(p) for p in model.params()]
        return float("nan"), zeros

    monkeypatch.setattr(selector_mod, "loss_and_grad", poisoned)
    x = np.random.default_rng(0).normal(size=(32, 2))
    train = make_records(x, np.ones(32))
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train_selector(train, train, small_config())


# -- score_all ----------------------------------------------------------------------

def test_score_all_maxprob_equals_confidences():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 2))
    conf = rng.random(5)
    rs = make_records(x, np.ones(5), conf)
    scored = score_all(MaxProbSelector(), rs)
    assert [s.score for s in scored] == list(conf)
    assert [s.record.id for s in scored] == list(rs.ids())


def test_score_all_empty():
    assert score_all(MaxProbSelector(), RecordSet([])) == []


def test_score_all_deterministic():
    rng = np.random.default_rng(12)
    model = random_model(rng, 3, 4, dropout=0.3)
    rs = make_records(rng.normal(size=(6, 3)), np.ones(6))
    a = [s.score for s in score_all(model, rs)]
    b = [s.score for s in score_all(model, rs)]
    assert a == b


def test_score_all_dimension_mismatch():
    rng = np.random.default_rng(13)
    model = random_model(rng, 3, 4)
    rs = make_records(rng.normal(size=(2, 5)), np.ones(2))
    with pytest.raises(ValueError, match="dimension"):
        score_all(model, rs)


# -- checkpoints ----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    x = rng.normal(size=(120, 4))
    accs = (x[:, 1] > 0).astype(float)
    train = make_records(x, accs)
    model = train_selector(train, train, small_config(max_epochs=3))
    path = tmp_path / "selector.json"
    save_selector(model, path)
    loaded = load_selector(path)
    assert np.array_equal(loaded.W1, model.W1)
    assert loaded.train_config == model.train_config
    xq = rng.normal(size=4)
    assert mlp_forward(loaded, xq) == mlp_forward(model, xq)


def test_checkpoint_maxprob_round_trip(tmp_path):
    path = tmp_path / "mp.json"
    save_selector(MaxProbSelector(), path)
    assert isinstance(load_selector(path), MaxProbSelector)


def test_checkpoint_validates_dimensions(tmp_path):
    rng = np.random.default_rng(15)
    model = random_model(rng, 3, 4)
    path = tmp_path / "bad.json"
    save_selector(model, path)
    import json
    doc = json.loads(path.read_text())
    doc["d_in"] = 7
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="W1"):
        load_selector(path)
