"""From a rating log to a temporal hold-out split and per-user CV folds.

Run:  python3 demos/02_splits_and_folds.py
"""

import numpy as np

from hyperdp.dataset import fold_view, kfold_assign, statistics, temporal_holdout
from hyperdp.synthetic import movielens_100k_like

data = movielens_100k_like(seed=0)
s = statistics(data)
print(f"users {s['users']}  items {s['items']}  ratings {s['ratings']}  "
      f"sparsity {100 * s['sparsity']:.2f}%")

# Each user's oldest 80% goes to training, the rest is held out.
split = temporal_holdout(data, 0.8)
print(f"train {len(split.train)}  test {len(split.test)}")

# Folds are dealt per user, so almost every user shows up in every fold.
fa = kfold_assign(split.train, k=5, seed=0)
print("fold sizes:", fa.fold_sizes().tolist())

cv_train, cv_valid = fold_view(split.train, fa, held_out=0)
users_in_valid = len(np.unique(cv_valid.user))
print(f"fold 0: cv_train {len(cv_train)}  cv_valid {len(cv_valid)}  "
      f"users with validation rows {users_in_valid}/{data.n_users}")
