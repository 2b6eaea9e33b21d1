import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from repunlearn import evaluation as ev
from repunlearn.datasets import LabeledDataset, split_random_unlearn
from repunlearn.encoder import FeedForwardNet, Pipeline
from repunlearn.numerics import softmax

C = 6


def lookup_net(head_scale=10.0, bias=None):
    """dims (C, C, C): identity encoder, head = scale * I (+ bias)."""
    W1, b1 = np.eye(C), np.zeros(C)
    W2 = head_scale * np.eye(C)
    b2 = np.zeros(C) if bias is None else np.asarray(bias, dtype=float)
    return FeedForwardNet((C, C, C), np.concatenate([W1.ravel(), b1, W2.ravel(), b2]))


def onehot_data(labels, noise=0.0, rng=None):
    x = np.eye(C)[labels]
    if noise:
        x = x + noise * rng.standard_normal(x.shape)
    return LabeledDataset(x, np.asarray(labels), C)


def test_perfect_pipeline():
    data = onehot_data(np.arange(60) % C)
    assert ev.accuracy(Pipeline(lookup_net()), data) == 100.0
    assert ev.accuracy(Pipeline(lookup_net()), data, {2, 4}) == 100.0


def test_random_head_is_chance():
    rng = np.random.default_rng(0)
    n = 6000
    data = LabeledDataset(rng.standard_normal((n, C)), np.arange(n) % C, C)
    net = FeedForwardNet((C, C, C), rng.standard_normal(2 * (C * C + C)))
    acc = ev.accuracy(Pipeline(net), data)
    assert abs(acc - 100 / 6) <= 3 * 100 * math.sqrt((1 / 6) * (5 / 6) / n)


def test_retrained_model_forgets_class(toy):
    assert ev.accuracy(Pipeline(toy["retrained"]), toy["test"], {0}) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_accuracy_order_invariant(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, C, 50)
    data = onehot_data(labels, 0.8, rng)
    perm = rng.permutation(50)
    shuffled = LabeledDataset(data.features[perm], data.labels[perm], C)
    p = Pipeline(lookup_net())
    assert ev.accuracy(p, data) == ev.accuracy(p, shuffled)


def test_empty_filter_raises():
    with pytest.raises(ValueError):
        ev.accuracy(Pipeline(lookup_net()), onehot_data([1, 2]), {0})


# ------------------------------------------------------------------------ MIA

def test_mia_indistinguishable_is_about_half():
    rng = np.random.default_rng(1)
    net = lookup_net(0.0, bias=rng.standard_normal(C))  # ignores the input
    a = onehot_data(rng.integers(0, C, 2000))
    b = onehot_data(rng.integers(0, C, 2000))
    assert 50.0 <= ev.membership_inference(Pipeline(net), a, b) <= 53.0


def test_mia_separated_is_perfect():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, C, 300)
    members = onehot_data(labels)
    wrong = onehot_data((labels + 1) % C)
    nonmembers = LabeledDataset(wrong.features, labels, C)  # always mispredicted
    assert ev.membership_inference(Pipeline(lookup_net()), members, nonmembers) == 100.0


def test_mia_balances_and_is_seeded():
    rng = np.random.default_rng(3)
    a = onehot_data(rng.integers(0, C, 40), 1.0, rng)
    b = onehot_data(rng.integers(0, C, 400), 1.0, rng)
    p = Pipeline(lookup_net(1.0))
    r1 = ev.membership_inference(p, a, b, rng=np.random.default_rng(7))
    r2 = ev.membership_inference(p, a, b, rng=np.random.default_rng(7))
    assert r1 == r2 and 50.0 <= r1 <= 100.0
    # many thresholds vs quantile grid both stay in range
    assert 50.0 <= ev.membership_inference(p, a, b, n_thresholds=5) <= r1


def test_mia_original_model_random_forget(toy):
    split = split_random_unlearn(toy["train"], 0.1, np.random.default_rng(0))
    forget = toy["train"].subset(split.forget_indices)
    assert ev.membership_inference(Pipeline(toy["net"]), forget, toy["test"]) > 50.0


def test_mia_empty_raises():
    empty = LabeledDataset(np.zeros((0, C)), np.zeros(0, dtype=int), C)
    with pytest.raises(ValueError):
        ev.membership_inference(Pipeline(lookup_net()), empty, onehot_data([0]))


# ----------------------------------------------------------------------- CE

def test_uniform_pipeline_ce_is_log_c(toy):
    zero = FeedForwardNet(toy["net"].dims, np.zeros_like(toy["net"].params))
    ce = ev.test_ce_vs_retrain(Pipeline(zero), toy["retrained"], toy["test"])
    assert math.isclose(ce, math.log(C), rel_tol=1e-14)


def test_ce_of_retrain_is_its_entropy(toy):
    r = toy["retrained"]
    ce = ev.test_ce_vs_retrain(Pipeline(r), r, toy["test"])
    assert ce == ev.predictive_entropy(r, toy["test"])
    assert ce < 0.15  # mostly mass on forget-class inputs, which it never saw


def test_soft_ce_floor():
    q = np.array([[1.0, 0.0]])
    assert ev.soft_cross_entropy(q, np.array([[-1e6, 0.0]])) == pytest.approx(-math.log(1e-12))
    logits = np.random.default_rng(0).standard_normal((5, 3))
    direct = -np.sum(softmax(logits) * np.log(softmax(logits)), axis=1).mean()
    assert math.isclose(ev.soft_cross_entropy(softmax(logits), logits), direct, rel_tol=1e-12)


def test_ce_class_mismatch(toy):
    with pytest.raises(ValueError):
        ev.test_ce_vs_retrain(Pipeline(lookup_net()), toy["retrained"], toy["test"])


# ------------------------------------------------------------------- timing

def test_noop_timing():
    out, secs = ev.timed(lambda: 42)
    assert out == 42 and 0 <= secs < 0.01


def test_timing_measures_sleep():
    _, secs = ev.timed(time.sleep, 0.02)
    assert secs >= 0.02


def test_repeat_timing():
    mean, std, samples = ev.repeat_timing(lambda: None, repeats=4)
    assert len(samples) == 4 and std >= 0 and mean == pytest.approx(np.mean(samples))
    with pytest.raises(ValueError):
        ev.repeat_timing(lambda: None, repeats=0)


# ------------------------------------------------------------------- report

def test_report_speedup_and_row():
    r = ev.EvalReport("rep_unl", 0, 98.0, 1.0, 50.0, 0.2, unlearn_s=0.5, retrain_s=2.0)
    assert r.speedup == 4.0
    row = r.row()
    assert len(row) == len(ev.REPORT_COLUMNS) and row[-1] == 4.0
    assert math.isnan(ev.EvalReport("original", 0, 1, 1, 50, 0).speedup)


@pytest.mark.parametrize("kw", [{"retain_acc": 101.0}, {"forget_acc": -1.0}, {"test_ce": -0.1}])
def test_report_validation(kw):
    base = dict(method="m", seed=0, retain_acc=1.0, forget_acc=1.0, mia_acc=50.0, test_ce=0.0)
    with pytest.raises(ValueError):
        ev.EvalReport(**{**base, **kw})


def test_format_cell_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 98.4):
        assert float(ev.format_cell(v)) == v
    assert ev.format_cell("x") == "x" and ev.format_cell(3) == "3"
