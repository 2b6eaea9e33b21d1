"""Unlearning metrics: accuracies, loss-threshold membership inference, test CE."""

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .encoder import Pipeline, predict_pipeline
from .numerics import log_softmax, per_sample_xent, softmax

LOG_FLOOR = 1e-12

REPORT_COLUMNS = ("method", "seed", "retain_acc", "forget_acc", "mia_acc", "test_ce",
                  "unlearn_s", "retrain_s", "speedup")
TIMING_COLUMNS = ("unlearn_s", "retrain_s", "speedup")


def accuracy(p, data, class_filter=None):
    """Percentage of argmax-correct predictions, optionally on a class subset."""
    if class_filter is None:
        mask = np.ones(len(data), dtype=bool)
    else:
        mask = np.isin(data.labels, list(class_filter))
    if not mask.any():
        raise ValueError("no samples left after class filtering")
    pred = predict_pipeline(p, data.features[mask]).argmax(axis=1)
    return 100.0 * float(np.mean(pred == data.labels[mask]))


def sample_losses(p, data):
    return per_sample_xent(predict_pipeline(p, data.features), data.labels)


def membership_inference(p, forget_data, test_data, n_thresholds=1000, rng=None):
    """Best balanced accuracy (%) of a loss-threshold membership attack.

    Forget samples are members, held-out samples non-members; the larger side
    is subsampled without replacement so both have equal size. A sample is
    called a member when its loss is at or below the threshold. Candidate
    thresholds are the pooled losses themselves when there are at most
    ``n_thresholds`` of them, otherwise that many pooled quantiles; ``-inf``
    is always included, so the result is never below 50.
    """
    if len(forget_data) == 0 or len(test_data) == 0:
        raise ValueError("membership inference needs members and non-members")
    if rng is None:
        rng = np.random.default_rng(0)
    member = sample_losses(p, forget_data)
    nonmember = sample_losses(p, test_data)
    n = min(len(member), len(nonmember))
    if len(member) > n:
        member = member[np.sort(rng.choice(len(member), n, replace=False))]
    if len(nonmember) > n:
        nonmember = nonmember[np.sort(rng.choice(len(nonmember), n, replace=False))]
    pooled = np.concatenate([member, nonmember])
    if len(pooled) <= n_thresholds:
        cands = np.unique(pooled)
    else:
        cands = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_thresholds),
                                      method="inverted_cdf"))
    cands = np.concatenate([[-np.inf], cands])
    return 100.0 * float(kernels.threshold_accuracy(member, nonmember, cands).max())


def soft_cross_entropy(q_ref, logits):
    """Mean of ``-sum_y q_ref(y) log q(y)`` with ``q = softmax(logits)`` floored at 1e-12."""
    logq = np.maximum(log_softmax(logits), math.log(LOG_FLOOR))
    return float(np.mean(-np.sum(q_ref * logq, axis=1)))


def test_ce_vs_retrain(p, retrain_net, test_data):
    """Cross-entropy (nats) of the pipeline's predictive distribution against the
    retrained model's, averaged over the test set."""
    if p.net.n_classes != retrain_net.n_classes:
        raise ValueError("pipeline and retrain model disagree on the class count")
    q_ref = softmax(predict_pipeline(Pipeline(retrain_net), test_data.features))
    return soft_cross_entropy(q_ref, predict_pipeline(p, test_data.features))


def predictive_entropy(net, data):
    logits = predict_pipeline(Pipeline(net), data.features)
    return soft_cross_entropy(softmax(logits), logits)


def timed(fn, *args, **kwargs):
    """Run ``fn`` and return ``(result, wall_seconds)`` on the monotonic clock."""
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def repeat_timing(fn, repeats=3):
    """Wall times of ``repeats`` calls; returns ``(mean, std, samples)``."""
    if repeats < 1:
        raise ValueError("need at least one repeat")
    samples = [timed(fn)[1] for _ in range(repeats)]
    return float(np.mean(samples)), float(np.std(samples)), samples


@dataclass
class EvalReport:
    method: str
    seed: int
    retain_acc: float
    forget_acc: float
    mia_acc: float
    test_ce: float
    unlearn_s: float = float("nan")
    retrain_s: float = float("nan")

    def __post_init__(self):
        for name in ("retain_acc", "forget_acc", "mia_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.test_ce < 0:
            raise ValueError("test cross-entropy must be non-negative")

    @property
    def speedup(self):
        if not (self.unlearn_s > 0 and math.isfinite(self.retrain_s)):
            return float("nan")
        return self.retrain_s / self.unlearn_s

    def row(self):
        d = asdict(self)
        d["speedup"] = self.speedup
        return [d[c] for c in REPORT_COLUMNS]


def format_cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)
