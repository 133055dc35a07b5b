"""Which hyper-parameter dominates?  DP of nDCG over pairs sharing one value.

For each value of a dimension, pairs are drawn only among configurations
that share it, so only the other dimensions vary inside a pair.

Run:  python3 demos/05_dominant_hyperparameters.py
"""

from hyperdp.analysis import (GridSpec, build_grid, dominant_analysis, format_dominant_table,
                              run_grid)
from hyperdp.dataset import kfold_assign, temporal_holdout
from hyperdp.store import MetricStore
from hyperdp.synthetic import movielens_100k_like

split = temporal_holdout(movielens_100k_like(seed=0), 0.8)
fa = kfold_assign(split.train, k=3, seed=0)

grid = build_grid(GridSpec("BprMf", {
    "factors": [14, 20, 28],
    "iterations": [6, 8, 11],
    "learning_rate": [0.05, 0.025, 0.0125],
}))
store = MetricStore()
run_grid(grid, split.train, fa, store, master_seed=0)

for dim in ("factors", "iterations", "learning_rate"):
    rows = dominant_analysis(store, grid, dim, metric="ndcg", m=10, seed=0)
    print(format_dominant_table(dim, rows))
