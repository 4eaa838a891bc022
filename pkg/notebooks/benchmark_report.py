"""Summarise a finished ``dcmab benchmark`` run.

Usage: ``python notebooks/benchmark_report.py runs/benchmark/benchmark_runs.json``.
Prints the per-experiment table and the per-seed revenues side by side, which
is the quickest way to see whether an ordering holds on every seed or only on
average.
"""
import sys

import numpy as np

from dcmab.benchmark import BenchmarkResult

path = sys.argv[1] if len(sys.argv) > 1 else "runs/benchmark/benchmark_runs.json"
with open(path) as fh:
    res = BenchmarkResult.from_json(fh.read())

print(f"{'experiment':>12} {'mean':>10} {'std':>8} {'min':>10} {'max':>10}")
for row in sorted(res.table(), key=lambda r: -r["mean"]):
    print(f"{row['experiment']:>12} {row['mean']:10.1f} {row['std']:8.1f} {row['min']:10.1f} {row['max']:10.1f}")

seeds = sorted({r.seed for r in res.runs})
print("\nper seed:", " ".join(f"{s:>9}" for s in seeds))
for name in sorted({r.experiment for r in res.runs}):
    by_seed = {r.seed: r.total_revenue for r in res.runs if r.experiment == name}
    print(f"{name:>9}", " ".join(f"{by_seed.get(s, np.nan):9.1f}" for s in seeds))

spend = [np.round(r.spent_fraction, 3).tolist() for r in res.runs if r.experiment == "dcmab"]
if spend:
    print("\nDCMAB spent fraction per cluster:", spend)
