"""Train the three recommenders on one fold and score them with all six metrics.

Run:  python3 demos/03_recommenders_and_metrics.py
"""

import numpy as np

from hyperdp.dataset import fold_view, kfold_assign, temporal_holdout
from hyperdp.metrics import LABELS, METRICS, PopularityModel, evaluate_system, judge
from hyperdp.recommenders import HyperConfig, recommend_many, train
from hyperdp.synthetic import movielens_100k_like

split = temporal_holdout(movielens_100k_like(seed=0), 0.8)
fa = kfold_assign(split.train, k=3, seed=0)
cv_train, cv_valid = fold_view(split.train, fa, 0)

rel = judge(cv_valid, tau=4.0)          # ratings >= 4 count as relevant
pop = PopularityModel.from_dataset(cv_train)
users = np.array(sorted(rel), dtype=np.int64)

configs = [
    HyperConfig.user_knn(40),
    HyperConfig.item_knn(40),
    HyperConfig.bpr_mf(factors=20, iterations=11, learning_rate=0.05),
    HyperConfig.bpr_mf(factors=20, iterations=1, learning_rate=0.0000122),
]
print(f"{'config':<54}" + "".join(f"{LABELS[m]:>9}" for m in METRICS))
for cfg in configs:
    model = train(cv_train, cfg, seed=0)
    lists = recommend_many(model, users, cv_train, N=10)
    mats = evaluate_system(lists, rel, pop, N=10, config_id=cfg.config_id)
    row = "".join(f"{mats[m].mean:>9.4f}" for m in METRICS)
    print(f"{cfg.variant + ' ' + cfg.label():<54}{row}")

# The last BPR-MF row barely moves away from its random start, so its
# accuracy is close to chance while its novelty is high.
