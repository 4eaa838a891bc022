"""Command line entry point: ``python -m dcmab <command> --config run.ini``.

Commands: generate, calibrate, train, evaluate, sweep-clusters, sweep-budget, benchmark.
Every command takes ``--config``, ``--seed``, ``--workers`` and ``--out``;
the config file alone is enough to run calibrate -> train -> evaluate.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import clustering, dataio
from .benchmark import BenchmarkResult, experiment_specs, run_benchmark
from .config import RunConfig, load_config, with_overrides
from .metrics import compute_metrics, write_metrics_csv
from .simulator import (Setup, build_team, calibrate, prepare, run_episode, run_training,
                        sweep_budget_ratio, sweep_cluster_count)

log = logging.getLogger("dcmab")

CURVE_COLUMNS = ["episode", "train_revenue", "greedy_revenue", "greedy_cost"]
TRAINING_METRICS_COLUMNS = ["episode", "agent", "reward", "critic_loss", "actor_metric"]


def _out_dir(cfg: RunConfig) -> str:
    out = cfg.path(cfg.out)
    os.makedirs(out, exist_ok=True)
    return out


def _logs(cfg: RunConfig):
    train = dataio.load_or_generate(cfg.path(cfg.train_log), cfg.generator, cfg.train_seed)
    test = dataio.load_or_generate(cfg.path(cfg.test_log), cfg.generator, cfg.test_seed)
    return train, test


def load_setup(cfg: RunConfig) -> Setup:
    train, test = _logs(cfg)
    ep = cfg.episode
    return prepare(train, test, cfg.n_merchant_clusters, cfg.n_consumer_clusters, ep.budget_fraction,
                   ep.slots, ep.reserve, cfg.agent.bid_range, ep.steps_per_episode)


def _write_rows(path: str, columns: List[str], rows: List[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in columns})


def _cell(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(x)) for x in v)
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _seed(cfg: RunConfig) -> int:
    return cfg.seeds[0]


# --- commands ---

def cmd_generate(cfg: RunConfig) -> int:
    for path, seed in ((cfg.train_log, cfg.train_seed), (cfg.test_log, cfg.test_seed)):
        full = cfg.path(path)
        os.makedirs(os.path.dirname(full) or ".", exist_ok=True)
        dataio.generate_synthetic_log(cfg.generator, seed, full)
        print(f"wrote {full}")
    return 0


def cmd_calibrate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    setup = load_setup(cfg)
    tc, sc = setup.train_calibration, setup.test_calibration
    rev = np.sort(calibrate(setup.train.log).merchant_revenue)[::-1]
    top = max(1, int(round(0.1 * len(rev))))
    info = {
        "c_t_train": tc.c_t, "c_t_test": sc.c_t,
        "manual_unlimited_revenue_train": tc.total_revenue, "manual_unlimited_revenue_test": sc.total_revenue,
        "budget_fraction": cfg.episode.budget_fraction,
        "total_budget_train": float(setup.train.budgets.sum()),
        "total_budget_test": float(setup.test.budgets.sum()),
        "top10_revenue_share": float(rev[:top].sum() / max(rev.sum(), 1e-12)),
        "merchant_cluster_sizes": np.bincount(setup.assignment.merchant_array(setup.train.log.merchant_ids),
                                              minlength=setup.N).tolist(),
    }
    with open(os.path.join(out, "calibration.json"), "w") as fh:
        json.dump(info, fh, indent=2)
    clustering.write_assignment(os.path.join(out, "merchant_clusters.tsv"), setup.assignment.merchant_to_cluster)
    clustering.write_assignment(os.path.join(out, "consumer_clusters.tsv"), setup.assignment.consumer_to_cluster)
    print(f"C_T train={tc.c_t:.4f} test={sc.c_t:.4f}; wrote {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    setup = load_setup(cfg)
    seed = _seed(cfg)
    team = build_team(setup, experiment_specs(cfg.experiment, setup.N), cfg.agent, seed)
    training = run_training(setup.train, team, cfg.episode)
    _write_rows(os.path.join(out, "curves.csv"), CURVE_COLUMNS + [f"revenue_{i}" for i in range(setup.N)],
                training.curves)
    long_rows = [{"episode": r["episode"], "agent": i, "reward": r[f"revenue_{i}"],
                  "critic_loss": r[f"critic_loss_{i}"], "actor_metric": r[f"actor_{i}"]}
                 for r in training.curves for i in range(setup.N)]
    _write_rows(os.path.join(out, "training_metrics.csv"), TRAINING_METRICS_COLUMNS, long_rows)
    team.save(os.path.join(out, "checkpoint"))
    with open(os.path.join(out, "checkpoint", "run.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    test = run_episode(setup.test, team, cfg.episode)
    write_metrics_csv(os.path.join(out, "metrics.csv"), [(cfg.experiment, compute_metrics(test))])
    print(f"{cfg.experiment} seed={seed} best_episode={training.best_episode} "
          f"train={training.best_greedy_revenue:.2f} test={test.total_revenue:.2f}")
    return 0


def cmd_evaluate(cfg: RunConfig, checkpoint: Optional[str]) -> int:
    out = _out_dir(cfg)
    checkpoint = checkpoint or os.path.join(out, "checkpoint")
    setup = load_setup(cfg)
    team = build_team(setup, experiment_specs(cfg.experiment, setup.N), cfg.agent, _seed(cfg))
    if any(a.learns for a in team.agents):
        if not os.path.isdir(checkpoint):
            print(f"no checkpoint at {checkpoint}", file=sys.stderr)
            return 2
        team.load(checkpoint)
    test = run_episode(setup.test, team, cfg.episode)
    report = compute_metrics(test)
    write_metrics_csv(os.path.join(out, "evaluation.csv"), [(cfg.experiment, report)])
    print(f"{cfg.experiment} test revenue={test.total_revenue:.2f} "
          f"spend={np.round(test.spent_fraction, 3).tolist()}")
    return 0


def _values(text: Optional[str], default, cast):
    if not text:
        return list(default)
    return [cast(v) for v in text.split(",") if v.strip()]


def cmd_sweep_clusters(cfg: RunConfig, values: Optional[str]) -> int:
    out = _out_dir(cfg)
    train, test = _logs(cfg)
    ns = _values(values, (1, 2, 3, 4, 5), int)
    mode = experiment_specs(cfg.experiment, 1)[0].reward_mode if cfg.experiment != "manual" else "self_interest"
    rows = sweep_cluster_count(train, test, ns, mode, cfg.seeds, cfg.agent, cfg.episode)
    _write_rows(os.path.join(out, "sweep_clusters.csv"), ["n_clusters", "mean", "std", "values"], rows)
    for r in rows:
        print(f"N={r['n_clusters']}: {r['mean']:.2f} +- {r['std']:.2f}")
    return 0


def cmd_sweep_budget(cfg: RunConfig, values: Optional[str]) -> int:
    out = _out_dir(cfg)
    train, test = _logs(cfg)
    fr = _values(values, (0.125, 1 / 6, 0.25, 1 / 3, 0.5), float)
    rows = sweep_budget_ratio(train, test, fr, cfg.n_merchant_clusters, cfg.seeds, cfg.agent, cfg.episode)
    _write_rows(os.path.join(out, "sweep_budget.csv"),
                ["fraction", "dcmab_mean", "dcmab_std", "manual", "manual_spend", "values"], rows)
    for r in rows:
        print(f"budget={r['fraction']:.4f}: dcmab {r['dcmab_mean']:.2f} manual {r['manual']:.2f}")
    return 0


def cmd_benchmark(cfg: RunConfig, experiments: Optional[str]) -> int:
    out = _out_dir(cfg)
    names = _values(experiments, ("manual", "bandit", "a2c", "ddpg", "dcmab"), str)
    setup = load_setup(cfg)
    res = run_benchmark(names, cfg.seeds, setup, cfg.agent, cfg.episode,
                        cache=os.path.join(out, "benchmark_runs.json"))
    rows = res.table()
    _write_rows(os.path.join(out, "benchmark.csv"), ["experiment", "mean", "std", "min", "max", "seeds"], rows)
    for r in rows:
        print(f"{r['experiment']:>10}: {r['mean']:10.2f} +- {r['std']:.2f} [{r['min']:.2f}, {r['max']:.2f}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcmab", description="Multi-agent bidding simulator")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration file (INI, flat key = value)")
        sp.add_argument("--seed", type=int, help="override the experiment seed")
        sp.add_argument("--workers", type=int, help="worker threads per interval")
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("generate", help="write the synthetic train/test logs"))
    common(sub.add_parser("calibrate", help="unlimited-budget manual replay: C_T, budgets, clusters"))
    common(sub.add_parser("train", help="train the configured experiment, then test it"))
    ev = common(sub.add_parser("evaluate", help="replay the test log with a saved checkpoint"))
    ev.add_argument("--checkpoint")
    sc = common(sub.add_parser("sweep-clusters", help="test revenue against the number of clusters"))
    sc.add_argument("--values", help="comma-separated cluster counts")
    sb = common(sub.add_parser("sweep-budget", help="coordinated DCMAB vs manual across budget fractions"))
    sb.add_argument("--values", help="comma-separated fractions of C_T")
    bm = common(sub.add_parser("benchmark", help="multi-seed comparison of named experiments"))
    bm.add_argument("--experiments", help="comma-separated experiment names")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), args.seed, args.workers, args.out)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cmd = args.command
    if cmd == "generate":
        return cmd_generate(cfg)
    if cmd == "calibrate":
        return cmd_calibrate(cfg)
    if cmd == "train":
        return cmd_train(cfg)
    if cmd == "evaluate":
        return cmd_evaluate(cfg, args.checkpoint)
    if cmd == "sweep-clusters":
        return cmd_sweep_clusters(cfg, args.values)
    if cmd == "sweep-budget":
        return cmd_sweep_budget(cfg, args.values)
    return cmd_benchmark(cfg, args.experiments)


if __name__ == "__main__":
    sys.exit(main())
