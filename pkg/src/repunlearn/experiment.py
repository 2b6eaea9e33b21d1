"""Per-seed experiment stages shared by the CLI subcommands.

Every stage reads its inputs from, and writes its outputs to, one seed
directory, so the stages can run separately or chained by ``run_seed``. File
reads go through an ``AccessLog`` tagged with the stage name. That makes it
checkable that the zero-shot unlearning stage opens only the model, the forget
set and the count metadata.
"""

import csv
import io
import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import encoder, evaluation, kernels, unlearning
from .datasets import (AccessLog, TrackedRows, generate_toy_mixture, read_dataset_csv,
                       split_class_unlearn, split_from_forget_indices, split_random_unlearn,
                       write_dataset_csv)
from .encoder import Pipeline
from .evaluation import EvalReport, REPORT_COLUMNS, format_cell, timed
from .numerics import spawn_streams

log = logging.getLogger(__name__)

STREAMS = ("split", "train", "retrain", "finetune")
SWEEP_METRICS = ("retain_acc", "forget_acc", "mia_acc", "test_ce")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def streams_for(seed):
    return spawn_streams(np.random.SeedSequence(int(seed)), STREAMS)


def cell_rng(seed, cell=0, purpose=0):
    """Generator for grid cell ``cell``: purpose 0 drives unlearning, 1 the MIA
    subsample. A plain run is cell 0, so a 1x1 sweep reproduces it exactly."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cell), int(purpose)]))


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path, access_log, stage):
    access_log.record(stage, path)
    return json.loads(Path(path).read_text(encoding="utf-8"))


@_stage("gen-data")
def gen_data(cfg, seed, d):
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    train, test = generate_toy_mixture(replace(cfg.dataset, seed=int(seed)))
    write_dataset_csv(train, d / "train.csv")
    write_dataset_csv(test, d / "test.csv")
    return train, test


@_stage("split")
def make_split(cfg, seed, d, access_log):
    d = Path(d)
    train = read_dataset_csv(d / "train.csv", cfg.dataset.C, access_log, "split")
    u = cfg.unlearn
    if u.mode == "class":
        split = split_class_unlearn(train, u.forget_classes)
    else:
        split = split_random_unlearn(train, u.fraction, streams_for(seed)["split"])
    write_dataset_csv(train.subset(split.retain_indices), d / "retain.csv")
    write_dataset_csv(train.subset(split.forget_indices), d / "forget.csv")
    _write_json(d / "split.json", split.to_dict())
    _write_json(d / "counts.json", {"class_counts": split.class_counts.tolist(),
                                    "forget_counts": split.forget_counts.tolist()})
    return split


@_stage("train")
def train_original(cfg, seed, d, access_log):
    d = Path(d)
    train = read_dataset_csv(d / "train.csv", cfg.dataset.C, access_log, "train")
    tc = replace(cfg.model.train, seed=int(seed))
    net, secs = timed(encoder.train_classifier, tc, train, cfg.model.dims,
                      streams_for(seed)["train"])
    encoder.save_net(net, d / "model.json")
    counts = _read_json(d / "counts.json", access_log, "train")
    meta = unlearning.ZeroShotMetadata.from_net(net, counts["class_counts"],
                                                counts["forget_counts"])
    _write_json(d / "metadata.json", meta.to_dict())
    return net, secs


@_stage("baselines")
def train_baselines(cfg, seed, d, access_log):
    d = Path(d)
    retain = read_dataset_csv(d / "retain.csv", cfg.dataset.C, access_log, "baselines")
    s = streams_for(seed)
    tc = replace(cfg.model.train, seed=int(seed))
    retrained, retrain_s = timed(encoder.retrain_baseline, tc, retain, cfg.model.dims,
                                 s["retrain"])
    encoder.save_net(retrained, d / "retrain.json")
    net = encoder.load_net(d / "model.json", access_log, "baselines")
    tuned, tune_s = timed(encoder.fine_tune_baseline, net, retain, cfg.unlearn.finetune_epochs,
                          tc.lr, s["finetune"], tc.batch_size, tc.weight_decay)
    encoder.save_net(tuned, d / "finetune.json")
    return {"retrain": retrain_s, "finetune": tune_s}


@_stage("unlearn")
def unlearn(cfg, seed, d, access_log, ucfg=None, rng=None, out_name="transformation.json"):
    """Fit the transformation for the configured regime.

    Standard: reads the training set and the split. Zero-shot: reads only the
    model, the forget set and the count metadata; forget rows are served
    through a ``TrackedRows`` so every forget-row index touched is logged.
    """
    d = Path(d)
    ucfg = cfg.unlearn.config if ucfg is None else ucfg
    rng = cell_rng(seed) if rng is None else rng
    net = encoder.load_net(d / "model.json", access_log, "unlearn")
    if cfg.unlearn.regime == "zero_shot":
        forget = read_dataset_csv(d / "forget.csv", cfg.dataset.C, access_log, "unlearn")
        meta = unlearning.ZeroShotMetadata.from_dict(
            _read_json(d / "metadata.json", access_log, "unlearn"))
        rows = TrackedRows(forget.features, np.arange(len(forget)), access_log)
        f, secs = timed(unlearning.unlearn_zero_shot, net, rows, meta, ucfg, rng)
    else:
        train = read_dataset_csv(d / "train.csv", cfg.dataset.C, access_log, "unlearn")
        split = _split_from_json(train, _read_json(d / "split.json", access_log, "unlearn"))
        f, secs = timed(unlearning.unlearn_standard, net, train, split, ucfg, rng)
    unlearning.save_transformation(f, d / out_name)
    return f, secs


def _split_from_json(train, doc):
    return split_from_forget_indices(train, doc["forget_indices"], doc["mode"],
                                     doc["forget_classes"])


def method_name(cfg):
    return "rep_unl_zs" if cfg.unlearn.regime == "zero_shot" else "rep_unl"


def _eval_sets(cfg, d, access_log):
    C = cfg.dataset.C
    train = read_dataset_csv(d / "train.csv", C, access_log, "eval")
    test = read_dataset_csv(d / "test.csv", C, access_log, "eval")
    split = _split_from_json(train, _read_json(d / "split.json", access_log, "eval"))
    return train, test, split


def evaluate_pipeline(cfg, p, retrained, train, test, split, seed, rng=None):
    """``(retain_acc, forget_acc, mia_acc, test_ce)`` for one pipeline.

    Class mode scores accuracies on the test set, split by class. MIA uses
    forget-class test samples as non-members. Random mode scores accuracies on
    the retain and forget training subsets, with the whole test set as
    non-members.
    """
    forget_data = train.subset(split.forget_indices)
    if split.mode == "class":
        fc = set(split.forget_classes)
        keep = [c for c in range(train.n_classes) if c not in fc]
        retain_acc = evaluation.accuracy(p, test, keep)
        forget_acc = evaluation.accuracy(p, test, fc)
        nonmembers = test.subset(np.flatnonzero(np.isin(test.labels, list(fc))))
    else:
        retain_acc = evaluation.accuracy(p, train.subset(split.retain_indices))
        forget_acc = evaluation.accuracy(p, forget_data)
        nonmembers = test
    if rng is None:
        rng = cell_rng(seed, 0, 1)
    mia = evaluation.membership_inference(p, forget_data, nonmembers,
                                          cfg.eval.mia_thresholds, rng)
    ce = evaluation.test_ce_vs_retrain(p, retrained, test)
    return retain_acc, forget_acc, mia, ce


@_stage("eval")
def evaluate(cfg, seed, d, access_log, timings=None):
    d = Path(d)
    timings = timings or {}
    train, test, split = _eval_sets(cfg, d, access_log)
    net = encoder.load_net(d / "model.json", access_log, "eval")
    retrained = encoder.load_net(d / "retrain.json", access_log, "eval")
    tuned = encoder.load_net(d / "finetune.json", access_log, "eval")
    f = unlearning.load_transformation(d / "transformation.json", access_log, "eval")
    retrain_s = timings.get("retrain", math.nan)
    pipes = [("original", Pipeline(net), math.nan),
             ("retrain", Pipeline(retrained), retrain_s),
             ("finetune", Pipeline(tuned), timings.get("finetune", math.nan)),
             (method_name(cfg), Pipeline(net, f), timings.get("unlearn", math.nan))]
    reports = []
    for name, p, secs in pipes:
        # each method gets the same MIA subsample
        r, fa, mia, ce = evaluate_pipeline(cfg, p, retrained, train, test, split, seed)
        reports.append(EvalReport(name, int(seed), r, fa, mia, ce, secs, retrain_s))
    return reports


def run_seed(cfg, seed, root, access_log=None):
    """All stages for one seed; returns ``(reports, access_log)``."""
    d = Path(root) / f"seed_{seed}"
    access_log = AccessLog() if access_log is None else access_log
    kernels.warmup()
    gen_data(cfg, seed, d)
    make_split(cfg, seed, d, access_log)
    train_original(cfg, seed, d, access_log)
    timings = train_baselines(cfg, seed, d, access_log)
    _, timings["unlearn"] = unlearn(cfg, seed, d, access_log)
    reports = evaluate(cfg, seed, d, access_log, timings)
    _write_json(d / "timings.json", timings)
    return reports, access_log


def access_log_doc(access_log, root):
    root = Path(root)

    def rel(p):
        try:
            return str(Path(p).relative_to(root))
        except ValueError:
            return str(p)
    return {"files": [[s, rel(p)] for s, p in access_log.files],
            "forget_rows_read_by_unlearn": sorted(access_log.indices)}


# ----------------------------------------------------------------- reports

def reports_csv_text(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([format_cell(v) for v in r.row()])
    return buf.getvalue()


def summary_csv_text(reports):
    """Mean and standard deviation per (method, metric) over seeds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "metric", "mean", "std", "n"])
    methods = list(dict.fromkeys(r.method for r in reports))
    for m in methods:
        rows = [r for r in reports if r.method == m]
        for metric in REPORT_COLUMNS[2:]:
            vals = np.array([r.row()[REPORT_COLUMNS.index(metric)] for r in rows], dtype=float)
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            w.writerow([m, metric, format(float(np.mean(vals)), ".17g"),
                        format(std, ".17g"), len(vals)])
    return buf.getvalue()


def strip_timing(csv_text):
    """Drop timing columns/rows so outputs can be compared byte for byte."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    if not rows:
        return ""
    header = rows[0]
    if "metric" in header and "mean" in header:
        mi = header.index("metric")
        rows = [rows[0]] + [r for r in rows[1:] if r[mi] not in evaluation.TIMING_COLUMNS]
        return "\n".join(",".join(r) for r in rows) + "\n"
    keep = [i for i, h in enumerate(header) if h not in evaluation.TIMING_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows) + "\n"


# ------------------------------------------------------------------- sweeps

def sweep_seed(cfg, seed, root, cells=None):
    """All grid cells for one seed.

    The original and baseline models are shared by every cell. Cell ``i``
    unlearns with ``cell_rng(seed, i)``, so cells are independent of execution
    order. The regime comes from the config.
    Returns long-format rows ``(beta, depth, seed, metric, value)``.
    """
    d = Path(root) / f"seed_{seed}"
    access_log = AccessLog()
    gen_data(cfg, seed, d)
    make_split(cfg, seed, d, access_log)
    net, _ = train_original(cfg, seed, d, access_log)
    train_baselines(cfg, seed, d, access_log)
    train, test, split = _eval_sets(cfg, d, access_log)
    retrained = encoder.load_net(d / "retrain.json", access_log, "eval")
    rows = []
    for idx, beta, depth in (cfg.sweep.cells() if cells is None else cells):
        rows.extend(sweep_cell(cfg, seed, d, idx, beta, depth, net, retrained, train, test,
                               split, access_log))
    return rows


def sweep_cell(cfg, seed, d, idx, beta, depth, net, retrained, train, test, split, access_log):
    ucfg = replace(cfg.unlearn.config, beta=float(beta), depth=int(depth))
    f, _ = unlearn(cfg, seed, d, access_log, ucfg, cell_rng(seed, idx),
                   out_name=f"cell_{idx}.json")
    vals = evaluate_pipeline(cfg, Pipeline(net, f), retrained, train, test, split, seed,
                             cell_rng(seed, idx, 1))
    return [(float(beta), int(depth), int(seed), m, float(v)) for m, v in zip(SWEEP_METRICS, vals)]


def sweep_csv_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "depth", "seed", "metric", "value"])
    for b, dep, s, m, v in sorted(rows):
        w.writerow([format(b, ".17g"), dep, s, m, format(v, ".17g")])
    return buf.getvalue()


def sweep_table(rows, metric, betas, depths):
    """Seed-averaged ``metric`` as a (len(betas), len(depths)) array."""
    out = np.full((len(betas), len(depths)), np.nan)
    for i, b in enumerate(betas):
        for j, dep in enumerate(depths):
            v = [r[4] for r in rows if r[0] == b and r[1] == dep and r[3] == metric]
            if v:
                out[i, j] = float(np.mean(v))
    return out
