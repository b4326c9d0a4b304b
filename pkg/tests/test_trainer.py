import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fefm import trainer
from fefm.data import Dataset
from fefm.errors import ConfigError, DataError, NumericError
from fefm.metrics import auc_metric, instance_loss, log_loss_metric, sigmoid
from fefm.models import init_model, regularization_group
from fefm.shallow import ShallowParams, SparseGradient
from fefm.synthetic import planted_task
from fefm.trainer import AdaGradState, EarlyStopping, TrainConfig, batch_step, evaluate, fit
from helpers import random_active, random_dataset
from oracles import pairwise_auc, simulate_early_stopping


def history_rows(path):
    """History CSV rows without the wall-time column."""
    with open(path, newline="") as fh:
        return [row[:-1] for row in csv.reader(fh)]


def direct_log_loss(probs, labels):
    total = 0.0
    for p, y in zip(probs, labels):
        p = min(max(p, 1e-15), 1 - 1e-15)
        total += -math.log(p) if y > 0 else -math.log(1 - p)
    return total / len(probs)


# -- metrics ---------------------------------------------------------------------

def test_sigmoid():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(1000.0) == 1.0
    assert sigmoid(-1000.0) == 0.0
    x = np.random.default_rng(0).normal(scale=10, size=200)
    assert np.allclose(sigmoid(-x), 1 - sigmoid(x), rtol=0, atol=1e-15)


def test_instance_loss():
    assert instance_loss(0.0, 1) == pytest.approx(math.log(2), abs=1e-15)
    assert instance_loss(0.0, -1) == pytest.approx(0.693147, abs=1e-6)
    assert instance_loss(50.0, 1) < 1e-20
    assert instance_loss(2.0, -1) == pytest.approx(2.126928, abs=1e-6)
    assert math.isfinite(instance_loss(1e6, -1))


def test_log_loss_examples():
    assert log_loss_metric([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2))
    assert log_loss_metric([1.0, 0.0], [1, -1]) < 1e-12
    assert log_loss_metric([0.9, 0.2], [1, 0]) == pytest.approx(0.164252, abs=1e-6)
    with pytest.raises(DataError):
        log_loss_metric([], [])


def test_auc_examples():
    assert auc_metric([0.8, 0.6, 0.2], [1, -1, -1]) == 1.0
    assert auc_metric([0.5, 0.5], [1, -1]) == 0.5
    with pytest.raises(DataError):
        auc_metric([0.1, 0.2], [1, 1])
    with pytest.raises(DataError):
        auc_metric([np.nan, 0.2], [1, 0])


def test_auc_and_log_loss_oracles(rng):
    for _ in range(10):
        scores = rng.integers(0, 30, size=1000) / 30.0  # plenty of ties
        labels = rng.choice([-1, 1], size=1000)
        assert auc_metric(scores, labels) == pairwise_auc(scores, labels)
        probs = rng.uniform(0.001, 0.999, size=1000)
        assert abs(log_loss_metric(probs, labels) - direct_log_loss(probs, labels)) <= 1e-12


# -- optimizer ------------------------------------------------------------------

def test_adagrad_scalar_steps():
    arrays = {"w0": np.zeros(1)}
    opt = AdaGradState(arrays, initial=0.0, eps=0.0)
    g = SparseGradient(dense={"w0": np.array([3.0])})
    opt.apply(arrays, g, eta=1.0)
    assert opt.acc["w0"][0] == 9.0 and arrays["w0"][0] == -1.0
    opt.apply(arrays, g, eta=1.0)
    assert opt.acc["w0"][0] == 18.0
    assert -1.0 - arrays["w0"][0] == pytest.approx(0.707107, abs=1e-6)


def test_adagrad_sparse_rows_and_defaults():
    arrays = {"v": np.zeros((4, 2))}
    opt = AdaGradState(arrays)
    assert opt.initial == 0.1 and opt.eps == 1e-7
    opt.apply(arrays, SparseGradient(rows={"v": (np.array([2]), np.ones((1, 2)))}), eta=0.5)
    assert np.array_equal(np.flatnonzero(arrays["v"].any(1)), [2])
    assert np.allclose(opt.acc["v"][2], 1.1) and np.allclose(opt.acc["v"][0], 0.1)


def test_adagrad_monotone_accumulators(rng):
    model = init_model("FEFM", 12, 4, 3, seed=1)
    ds = random_dataset(4, 3, 64, rng)
    cfg = TrainConfig(eta=0.1)
    opt = AdaGradState(model.arrays())
    prev = {k: v.copy() for k, v in opt.acc.items()}
    for b in range(8):
        sl = slice(8 * b, 8 * b + 8)
        batch_step(model, ds.active[sl], ds.labels[sl], cfg, opt)
        for name, acc in opt.acc.items():
            assert (acc >= prev[name]).all() and (acc >= 0).all()
            prev[name] = acc.copy()


def test_constant_gradient_step_shrinks():
    arrays = {"w0": np.zeros(1)}
    opt = AdaGradState(arrays)
    g = SparseGradient(dense={"w0": np.array([0.5])})
    steps = []
    for _ in range(5):
        before = arrays["w0"][0]
        opt.apply(arrays, g, eta=0.1)
        steps.append(before - arrays["w0"][0])
    assert all(a > b for a, b in zip(steps, steps[1:]))


def test_pure_l2_decay():
    # v = 0 kills every data path into u, so only lambda3 moves it
    model = ShallowParams.init("FEFM", 6, 3, 2)
    model.v[:] = 0
    model.u[:] = 0.5
    cfg = TrainConfig(eta=0.01, lambda3=1e3)
    opt = AdaGradState(model.arrays())
    active = np.array([[0, 2, 4], [1, 3, 5]])
    prev = np.abs(model.u).copy()
    for _ in range(5):
        batch_step(model, active, np.array([1, -1]), cfg, opt)
        now = np.abs(model.u)
        assert (now < prev).all()
        prev = now.copy()


def test_regularization_groups():
    assert regularization_group("w") == "lambda1"
    assert regularization_group("v") == regularization_group("v_ffm") == "lambda2"
    assert regularization_group("r") == regularization_group("u") == "lambda3"
    assert regularization_group("dnn_W0") == regularization_group("w_logit") == "lambda_deep"
    assert regularization_group("w0") is None and regularization_group("dnn_b0") is None


@pytest.mark.parametrize("raise_", ["lambda2", "lambda3"])
def test_lambda_grouping_isolated(raise_, rng):
    base = init_model("FEFM", 12, 4, 3, seed=2)
    for arr in base.arrays().values():
        arr[...] = rng.normal(size=arr.shape)
    active = random_active(4, 3, rng, size=6)
    labels = rng.choice([-1, 1], size=6)

    def one_step(**lams):
        model = base.copy()
        batch_step(model, active, labels, TrainConfig(eta=0.1, **lams), AdaGradState(model.arrays()))
        return model

    plain = one_step()
    raised = one_step(**{raise_: 1.0})
    same, changed = ("v", "u") if raise_ == "lambda3" else ("u", "v")
    assert np.array_equal(plain.arrays()[same], raised.arrays()[same])
    assert not np.array_equal(plain.arrays()[changed], raised.arrays()[changed])
    assert np.array_equal(plain.w, raised.w)


def test_l2_only_touches_batch_rows(rng):
    model = init_model("FM", 12, 4, 3, seed=2)
    model.w[:] = 1.0
    before = model.copy()
    active = np.array([[0, 3, 6, 9]])
    batch_step(model, active, np.array([1]), TrainConfig(eta=0.1, lambda1=10.0), AdaGradState(model.arrays()))
    untouched = np.setdiff1d(np.arange(12), active)
    assert np.array_equal(model.w[untouched], before.w[untouched])


def test_train_config_validation():
    for bad in ({"eta": 0}, {"lambda2": -1}, {"batch_size": 0}, {"patience": -1}, {"max_epochs": 0}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.min_delta, cfg.patience) == (1024, 0.000005, 2)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- early stopping -----------------------------------------------------------------

def scripted_fit(monkeypatch, losses, max_epochs, min_delta=5e-6, patience=2):
    script = iter(losses)
    monkeypatch.setattr(trainer, "_validation_metrics", lambda model, ds: (next(script), 0.5))
    rng = np.random.default_rng(0)
    ds = random_dataset(2, 2, 8, rng)
    model = init_model("LR", 4, 2, 1)
    cfg = TrainConfig(max_epochs=max_epochs, min_delta=min_delta, patience=patience, batch_size=4)
    return fit(model, ds, ds, cfg)


def test_early_stopping_worked_example(monkeypatch):
    losses = [0.50, 0.49, 0.4899, 0.48991]
    assert simulate_early_stopping(losses, 5e-6, 2) == (4, 3)
    _, history = scripted_fit(monkeypatch, losses, max_epochs=4)
    assert len(history.records) == 4 and history.best_epoch == 3
    # one more non-improving epoch exhausts the patience of 2
    _, history = scripted_fit(monkeypatch, losses + [0.4899, 0.1], max_epochs=6)
    assert len(history.records) == 5 and history.stopped_early and history.best_epoch == 3


def test_early_stopping_rule():
    stop = EarlyStopping(min_delta=0.1, patience=2)
    assert [stop.update(x) for x in (1.0, 0.95, 0.85, 0.84, 0.80)] == [False, False, False, False, True]
    assert not EarlyStopping(patience=0).update(1.0)
    assert EarlyStopping(patience=0).update(math.inf)


@given(
    st.lists(st.floats(0.1, 1.0), min_size=1, max_size=15),
    st.sampled_from([0.0, 5e-6, 0.01, 0.1]),
    st.integers(0, 4),
)
@settings(max_examples=40, deadline=None)
def test_early_stopping_matches_reference(losses, min_delta, patience):
    # coarse rounding makes ties and near-ties likely
    losses = [round(x, 2) for x in losses]
    with pytest.MonkeyPatch.context() as mp:
        _, history = scripted_fit(mp, losses, len(losses), min_delta, patience)
    run, best = simulate_early_stopping(losses, min_delta, patience)
    assert len(history.records) == run
    assert history.best_epoch == best


# -- fit ---------------------------------------------------------------------------

def test_returns_best_validation_model(rng):
    task = planted_task(n=4, cardinality=5, seed=1)
    train, val = task.sample(400, 1), task.sample(200, 2)
    model = init_model("FEFM", task.m, task.n, 3, seed=0)
    best, history = fit(model, train, val, TrainConfig(eta=0.2, batch_size=32, max_epochs=15, patience=15))
    _, best_loss = evaluate(best, val)
    assert best_loss == pytest.approx(min(history.val_losses), rel=1e-12)
    assert history.records[history.best_epoch - 1].val_logloss == min(history.val_losses)


def test_overfit_small_set():
    task = planted_task(n=8, cardinality=10, seed=3)
    ds = task.sample(256, seed=4)
    model = init_model("FEFM", task.m, task.n, 4, seed=0)
    cfg = TrainConfig(eta=0.1, batch_size=32, max_epochs=200, patience=200)
    best, history = fit(model, ds, ds, cfg)
    assert len(history.records) <= 200
    assert evaluate(best, ds)[1] < 0.05


def test_fit_is_deterministic(tmp_path):
    task = planted_task(n=4, cardinality=5, seed=0)
    train, val = task.sample(300, 1), task.sample(100, 2)
    paths = []
    for run in range(2):
        model = init_model("DeepFEFM", task.m, task.n, 3, seed=9, widths=(6,), dropout=0.3)
        _, history = fit(model, train, val, TrainConfig(eta=0.05, batch_size=64, max_epochs=4, seed=5))
        paths.append(tmp_path / f"h{run}.csv")
        history.to_csv(paths[-1])
    assert history_rows(paths[0]) == history_rows(paths[1])
    assert history_rows(paths[0])[0] == ["epoch", "train_loss", "val_logloss", "val_auc"]


def test_fit_rejects_mismatched_data(rng):
    model = init_model("FM", 8, 2, 2)
    with pytest.raises(DataError):
        fit(model, random_dataset(3, 3, 10, rng), random_dataset(3, 3, 10, rng), TrainConfig())


def test_fit_raises_on_divergence(monkeypatch, rng):
    monkeypatch.setattr(trainer, "_validation_metrics", lambda model, ds: (math.nan, math.nan))
    ds = random_dataset(2, 2, 8, rng)
    with pytest.raises(NumericError):
        fit(init_model("LR", 4, 2, 1), ds, ds, TrainConfig())


# -- evaluation ---------------------------------------------------------------------

def test_constant_model_metrics(rng):
    ds = random_dataset(3, 4, 50, rng)
    auc, loss = evaluate(init_model("LR", 12, 3, 1), ds)
    assert auc == 0.5 and loss == pytest.approx(math.log(2), abs=1e-15)


def test_separable_model_auc():
    labels = np.array([1, -1, 1, -1])
    ds = Dataset(labels, np.array([[0], [1], [0], [1]]), 1, 2)
    model = init_model("LR", 2, 1, 1)
    model.w[:] = [3.0, -3.0]
    assert evaluate(model, ds)[0] == 1.0


def test_single_class_evaluation_fails():
    ds = Dataset(np.array([1, 1]), np.array([[0], [1]]), 1, 2)
    with pytest.raises(DataError):
        evaluate(init_model("LR", 2, 1, 1), ds)
