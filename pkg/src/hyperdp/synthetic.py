"""Seeded synthetic rating logs with latent structure and popularity skew.

``movielens_100k_like`` has the user/item/rating counts of MovieLens-100k and
stands in for it where the real file is unavailable.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset


def synthetic_ratings(n_users: int, n_items: int, n_ratings: int, seed: int = 0,
                      n_factors: int = 8, min_per_user: int = 5,
                      popularity_exponent: float = 0.8) -> Dataset:
    """Draw a dataset whose ratings follow a low-rank model plus noise.

    Items are chosen per user with probability proportional to a Zipf-like
    popularity times ``exp(affinity)``; ratings are ``round(3.5 + affinity +
    noise)`` clipped to 1..5; timestamps increase along each user's history.
    """
    rng = np.random.default_rng(seed)
    if n_ratings > n_users * n_items:
        raise ValueError("more ratings than matrix cells")
    U = rng.normal(0, 1 / np.sqrt(n_factors), size=(n_users, n_factors))
    V = rng.normal(0, 1 / np.sqrt(n_factors), size=(n_items, n_factors))
    pop = 1.0 / np.arange(1, n_items + 1) ** popularity_exponent
    pop = pop[rng.permutation(n_items)]
    # per-user degree: lognormal, at least min_per_user, scaled to n_ratings
    raw = rng.lognormal(0.0, 0.9, size=n_users)
    deg = np.maximum(min_per_user, np.round(raw / raw.sum() * n_ratings)).astype(np.int64)
    deg = np.minimum(deg, n_items)
    while deg.sum() > n_ratings:
        over = np.flatnonzero(deg > min_per_user)
        deg[rng.choice(over, size=min(len(over), deg.sum() - n_ratings), replace=False)] -= 1
    while deg.sum() < n_ratings:
        under = np.flatnonzero(deg < n_items)
        deg[rng.choice(under, size=min(len(under), n_ratings - deg.sum()), replace=False)] += 1
    users, items, ratings, stamps = [], [], [], []
    for u in range(n_users):
        aff = V @ U[u]
        w = pop * np.exp(2.0 * aff)
        chosen = rng.choice(n_items, size=deg[u], replace=False, p=w / w.sum())
        r = np.clip(np.round(3.5 + 2.5 * aff[chosen] + rng.normal(0, 0.7, size=len(chosen))), 1, 5)
        t0 = rng.integers(874_000_000, 890_000_000)
        t = t0 + np.cumsum(rng.integers(1, 86_400, size=len(chosen)))
        users.append(np.full(len(chosen), u))
        items.append(chosen)
        ratings.append(r)
        stamps.append(t)
    u = np.concatenate(users)
    i = np.concatenate(items)
    order = np.lexsort((np.concatenate(stamps), u))
    records = zip((f"u{x + 1}" for x in u[order]), (f"i{x + 1}" for x in i[order]),
                  np.concatenate(ratings)[order], np.concatenate(stamps)[order])
    return Dataset.from_records(list(records))


def movielens_100k_like(seed: int = 0) -> Dataset:
    return synthetic_ratings(943, 1682, 100_000, seed=seed, min_per_user=20)


def small_corpus(seed: int = 0) -> Dataset:
    """200 users x 100 items, used by the property and acceptance tests."""
    return synthetic_ratings(200, 100, 6_000, seed=seed, min_per_user=10)
