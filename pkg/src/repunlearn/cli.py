"""Command-line harness: ``repunlearn <subcommand> [--config C] [--out DIR] [--seed N]``."""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds_lab, encoder, experiment, plotting, unlearning
from .config import dump_config, load_config
from .datasets import AccessLog, read_dataset_csv

log = logging.getLogger("repunlearn")


def _seed_dir(args, cfg):
    return Path(args.out or cfg.output) / f"seed_{_seed(args, cfg)}"


def _seed(args, cfg):
    return cfg.eval.seeds[0] if args.seed is None else args.seed


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def cmd_gen_data(args, cfg):
    d = _seed_dir(args, cfg)
    train, test = experiment.gen_data(cfg, _seed(args, cfg), d)
    print(f"wrote {len(train)} train and {len(test)} test rows to {d}")


def cmd_train(args, cfg):
    d = _seed_dir(args, cfg)
    seed = _seed(args, cfg)
    alog = AccessLog()
    experiment.make_split(cfg, seed, d, alog)
    net, secs = experiment.train_original(cfg, seed, d, alog)
    experiment.train_baselines(cfg, seed, d, alog)
    print(f"trained original model ({secs:.2f}s) and baselines in {d}")


def cmd_unlearn(args, cfg):
    d = _seed_dir(args, cfg)
    alog = AccessLog()
    f, secs = experiment.unlearn(cfg, _seed(args, cfg), d, alog)
    (d / "unlearn_access_log.json").write_text(
        json.dumps(experiment.access_log_doc(alog, d), indent=1) + "\n", encoding="utf-8")
    print(f"{cfg.unlearn.regime} unlearning finished in {secs:.3f}s "
          f"after {len(f.history)} epochs")


def cmd_eval(args, cfg):
    d = _seed_dir(args, cfg)
    timings_path = d / "timings.json"
    timings = json.loads(timings_path.read_text()) if timings_path.exists() else {}
    reports = experiment.evaluate(cfg, _seed(args, cfg), d, AccessLog(), timings)
    text = experiment.reports_csv_text(reports)
    (d / "report.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _run_one(job):
    cfg, seed, root = job
    reports, alog = experiment.run_seed(cfg, seed, root)
    return reports, experiment.access_log_doc(alog, Path(root) / f"seed_{seed}")


def cmd_run(args, cfg):
    root = Path(args.out or cfg.output)
    root.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else list(cfg.eval.seeds)
    (root / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    results = _map(_run_one, [(cfg, s, str(root)) for s in seeds], args.jobs)
    reports = [r for rs, _ in results for r in rs]
    logs = {str(s): doc for s, (_, doc) in zip(seeds, results)}
    (root / "access_log.json").write_text(json.dumps(logs, indent=1) + "\n", encoding="utf-8")
    (root / "report.csv").write_text(experiment.reports_csv_text(reports), encoding="utf-8")
    summary = experiment.summary_csv_text(reports)
    (root / "summary.csv").write_text(summary, encoding="utf-8")
    for r in reports:
        log.info("%s seed=%d retain=%.1f forget=%.1f mia=%.1f ce=%.3f", r.method, r.seed,
                 r.retain_acc, r.forget_acc, r.mia_acc, r.test_ce)
    sys.stdout.write(summary)


def _sweep_one(job):
    cfg, seed, root = job
    return experiment.sweep_seed(cfg, seed, root)


def cmd_sweep(args, cfg):
    root = Path(args.out or cfg.output)
    root.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else list(cfg.sweep.seeds)
    rows = [r for rs in _map(_sweep_one, [(cfg, s, str(root)) for s in seeds], args.jobs)
            for r in rs]
    (root / "sweep.csv").write_text(experiment.sweep_csv_text(rows), encoding="utf-8")
    betas, depths = list(cfg.sweep.betas), list(cfg.sweep.depths)
    for metric in experiment.SWEEP_METRICS:
        table = experiment.sweep_table(rows, metric, betas, depths)
        svg = plotting.heatmap_svg(table, [f"beta={b:g}" for b in betas],
                                   [f"depth {d}" for d in depths], title=metric)
        (root / f"sweep_{metric}.svg").write_text(svg, encoding="utf-8")
    print(f"wrote {len(rows)} sweep rows to {root / 'sweep.csv'}")


def cmd_verify_bounds(args, cfg):
    root = Path(args.out or cfg.output)
    root.mkdir(parents=True, exist_ok=True)
    base = 0 if args.seed is None else args.seed
    seeds = list(range(base, base + args.instances))
    reports = _map(_bounds_one, [(s, args.samples) for s in seeds], args.jobs)
    rows = [(s, r) for s, rs in zip(seeds, reports) for r in rs]
    (root / "bounds.csv").write_text(bounds_lab.reports_to_csv_text(rows), encoding="utf-8")
    passed = sum(all(r.passed for r in rs) for rs in reports)
    print(f"{passed}/{len(seeds)} instances respect every bound")


def _bounds_one(job):
    seed, n = job
    return bounds_lab.certify_instance(seed, n)


def cmd_plot_repr(args, cfg):
    net = encoder.load_net(args.model)
    data = read_dataset_csv(args.data, net.n_classes)
    f = unlearning.load_transformation(args.transformation) if args.transformation else None
    z = encoder.Pipeline(net, f).represent(data.features) if len(data) else np.empty((0, 2))
    svg = plotting.representation_svg(z, data.labels, cfg.unlearn.forget_classes,
                                      title="f(z)" if f is not None else "z")
    out = Path(args.svg)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    print(f"wrote {out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "unlearn": cmd_unlearn,
    "eval": cmd_eval,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "verify-bounds": cmd_verify_bounds,
    "plot-repr": cmd_plot_repr,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (defaults built in)")
    common.add_argument("--out", help="output directory (overrides config.output)")
    common.add_argument("--seed", type=int, help="single seed instead of the config's list")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    ap = argparse.ArgumentParser(prog="repunlearn", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify-bounds":
            p.add_argument("--instances", type=int, default=100)
            p.add_argument("--samples", type=int, default=4000)
        if name == "plot-repr":
            p.add_argument("--model", required=True)
            p.add_argument("--data", required=True)
            p.add_argument("--transformation")
            p.add_argument("--svg", required=True)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("REPUNLEARN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
