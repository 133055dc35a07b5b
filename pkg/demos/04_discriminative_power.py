"""Sweep a small grid, sample system pairs and compare the metrics' DP.

DP is the area under the fold-averaged, sorted p-value curve: lower means the
metric separates configurations more often.

Run:  python3 demos/04_discriminative_power.py
"""

from hyperdp.analysis import (GridSpec, build_grid, dp_analysis, format_dp_table, run_grid,
                              sample_pairs)
from hyperdp.dataset import kfold_assign, temporal_holdout
from hyperdp.store import MetricStore
from hyperdp.synthetic import movielens_100k_like

split = temporal_holdout(movielens_100k_like(seed=0), 0.8)
fa = kfold_assign(split.train, k=3, seed=0)

grid = build_grid(GridSpec("UserKnn", {"neighbors": [10, 14, 20, 28, 40, 57]}))
store = MetricStore()                     # in memory; pass a path to persist
summary = run_grid(grid, split.train, fa, store, N=10, master_seed=0)
print(f"cells: {summary.computed} computed, {len(summary.failed)} failed")

pairs = sample_pairs(grid, m=10, seed=0)
report = dp_analysis(store, pairs)
print(format_dp_table(report))

# The curve behind one DP value, ready for plotting.
print()
print(report.metrics["precision"].curve.to_plot_data())
