"""User-kNN, Item-kNN and BPR-MF recommenders with top-N list generation.

Candidate items for a user are all items absent from that user's training
profile ("All Unrated Items").  Ties are always broken by ascending id so that
every list is reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .dataset import Dataset
from .errors import ConfigError, TrainingDivergedError

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USER_KNN = "UserKnn"
ITEM_KNN = "ItemKnn"
BPR_MF = "BprMf"
VARIANTS = (USER_KNN, ITEM_KNN, BPR_MF)

INIT_STD = 0.1
USER_REG_SCALE = 1 / 20
ITEM_REG_SCALE = 1 / 200


@dataclass(frozen=True)
class HyperConfig:
    variant: str
    neighbors: int | None = None
    factors: int | None = None
    iterations: int | None = None
    learning_rate: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        knn = (self.neighbors,)
        mf = (self.factors, self.iterations, self.learning_rate)
        if self.variant == BPR_MF:
            if self.neighbors is not None or None in mf:
                raise ConfigError("BprMf needs factors, iterations and learning_rate only")
            if self.factors < 1 or self.iterations < 1 or not self.learning_rate > 0:
                raise ConfigError(f"invalid BprMf hyper-parameters: {self}")
        else:
            if any(v is not None for v in mf) or None in knn:
                raise ConfigError(f"{self.variant} needs neighbors only")
            if self.neighbors < 1:
                raise ConfigError(f"neighbors must be >= 1, got {self.neighbors}")

    @classmethod
    def user_knn(cls, k):
        return cls(USER_KNN, neighbors=int(k))

    @classmethod
    def item_knn(cls, k):
        return cls(ITEM_KNN, neighbors=int(k))

    @classmethod
    def bpr_mf(cls, factors, iterations, learning_rate):
        return cls(BPR_MF, factors=int(factors), iterations=int(iterations),
                   learning_rate=float(learning_rate))

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @property
    def dimensions(self) -> dict:
        d = self.to_dict()
        del d["variant"]
        return d

    @property
    def config_id(self) -> str:
        """Content hash, stable across runs and platforms."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return f"{self.variant.lower()}-{hashlib.sha256(blob).hexdigest()[:12]}"

    def label(self) -> str:
        return ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in self.dimensions.items())


class RankedList(NamedTuple):
    user: int
    items: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.items)


# ---------------------------------------------------------------- kNN


@dataclass(frozen=True, eq=False)
class KnnModel:
    """Truncated cosine neighbourhoods.

    Neighbour lists are stored CSR style: the neighbours of entity ``e`` are
    ``indices[indptr[e]:indptr[e+1]]`` with similarities in the same slice of
    ``sims``.
    """

    orientation: str
    k: int
    indptr: np.ndarray
    indices: np.ndarray
    sims: np.ndarray
    ratings: sparse.csr_matrix = field(repr=False)

    def neighbors(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[e], self.indptr[e + 1]
        return self.indices[lo:hi], self.sims[lo:hi]

    @property
    def n_entities(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_users(self) -> int:
        return self.ratings.shape[0]

    @property
    def n_items(self) -> int:
        return self.ratings.shape[1]

    def weights(self) -> sparse.csr_matrix:
        n = self.n_entities
        return sparse.csr_matrix((self.sims, self.indices, self.indptr), shape=(n, n))

    def score_matrix(self, users) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        W = self.weights()
        if self.orientation == "user":
            return np.asarray((W[users] @ self.ratings).todense())
        return np.asarray((self.ratings[users] @ W.T).todense())


def _top_neighbors(X: sparse.csr_matrix, k: int, block: int = 1024):
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    n = X.shape[0]
    valid = norms > 0
    inv = np.zeros(n)
    inv[valid] = 1.0 / norms[valid]
    Xn = sparse.diags(inv) @ X
    XnT = Xn.T.tocsc()
    kk = min(k, max(int(valid.sum()) - 1, 0))
    indptr = np.zeros(n + 1, dtype=np.int64)
    idx_parts, sim_parts = [], []
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        S = np.asarray((Xn[lo:hi] @ XnT).todense())
        np.clip(S, -1.0, 1.0, out=S)
        S[:, ~valid] = -np.inf
        S[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        # stable sort on -sim keeps ascending ids among ties; rounding makes
        # equal cosines reached through different float paths compare equal
        top = np.argsort(-np.round(S, 12), axis=1, kind="stable")[:, :kk]
        top_s = np.take_along_axis(S, top, axis=1)
        for r in range(hi - lo):
            if not valid[lo + r]:
                indptr[lo + r + 1] = indptr[lo + r]
                continue
            keep = np.isfinite(top_s[r])
            idx_parts.append(top[r][keep])
            sim_parts.append(top_s[r][keep])
            indptr[lo + r + 1] = indptr[lo + r] + int(keep.sum())
    indices = np.concatenate(idx_parts) if idx_parts else np.empty(0, dtype=np.int64)
    sims = np.concatenate(sim_parts) if sim_parts else np.empty(0)
    return indptr, indices.astype(np.int64), sims


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two dense rating vectors (zero entries are "unrated")."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def train_user_knn(cv_train: Dataset, k: int) -> KnnModel:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    R = cv_train.to_csr()
    indptr, indices, sims = _top_neighbors(R, k)
    return KnnModel("user", k, indptr, indices, sims, R)


def train_item_knn(cv_train: Dataset, k: int) -> KnnModel:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    R = cv_train.to_csr()
    indptr, indices, sims = _top_neighbors(R.T.tocsr(), k)
    return KnnModel("item", k, indptr, indices, sims, R)


def knn_score(m: KnnModel, user: int, item: int) -> float:
    if m.orientation == "user":
        nbrs, sims = m.neighbors(user)
        col = m.ratings[:, item].toarray().ravel()
        return float(np.sum(sims * col[nbrs]))
    nbrs, sims = m.neighbors(item)
    row = m.ratings[user].toarray().ravel()
    return float(np.sum(sims * row[nbrs]))


# ---------------------------------------------------------------- BPR-MF


@dataclass(frozen=True, eq=False)
class MfModel:
    P: np.ndarray
    Q: np.ndarray
    config: HyperConfig
    seed: int

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    @property
    def reg_user(self) -> float:
        return self.config.learning_rate * USER_REG_SCALE

    @property
    def reg_item(self) -> float:
        return self.config.learning_rate * ITEM_REG_SCALE

    def score_matrix(self, users) -> np.ndarray:
        return self.P[np.asarray(users, dtype=np.int64)] @ self.Q.T


def mf_score(m: MfModel, user: int, item: int) -> float:
    return float(m.P[user] @ m.Q[item])


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def bpr_triple_objective(p_u, q_i, q_j, reg_user, reg_item) -> float:
    """``ln sigma(x_uij)`` minus L2 penalties on the three touched vectors."""
    x = p_u @ (q_i - q_j)
    penalty = 0.5 * (reg_user * p_u @ p_u + reg_item * q_i @ q_i + reg_item * q_j @ q_j)
    return float(-np.logaddexp(0.0, -x) - penalty)


def bpr_triple_gradient(p_u, q_i, q_j, reg_user, reg_item):
    """Gradient of :func:`bpr_triple_objective` w.r.t. ``(p_u, q_i, q_j)``."""
    g = sigmoid(-(p_u @ (q_i - q_j)))
    return (
        g * (q_i - q_j) - reg_user * p_u,
        g * p_u - reg_item * q_i,
        -g * p_u - reg_item * q_j,
    )


def _sgd_pass(P, Q, us, is_, js, lr, reg_u, reg_i):
    F = P.shape[1]
    for s in range(us.shape[0]):
        u, i, j = us[s], is_[s], js[s]
        x = 0.0
        for f in range(F):
            x += P[u, f] * (Q[i, f] - Q[j, f])
        g = 1.0 / (1.0 + math.exp(x)) if x < 700.0 else 0.0
        for f in range(F):
            pu = P[u, f]
            qi = Q[i, f]
            qj = Q[j, f]
            P[u, f] = pu + lr * (g * (qi - qj) - reg_u * pu)
            Q[i, f] = qi + lr * (g * pu - reg_i * qi)
            Q[j, f] = qj + lr * (-g * pu - reg_i * qj)


_sgd_pass_py = _sgd_pass
if numba is not None:
    _sgd_pass = numba.njit(cache=True, nogil=True)(_sgd_pass_py)


class _TripleSampler:
    """Uniform user, uniform positive, rejection-sampled negative."""

    def __init__(self, cv_train: Dataset):
        self.n_items = cv_train.n_items
        counts = cv_train.user_counts()
        self.users = np.flatnonzero((counts > 0) & (counts < self.n_items))
        order = np.lexsort((cv_train.item, cv_train.user))
        self.flat_items = cv_train.item[order]
        self.starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        self.counts = counts
        self.keys = cv_train.user[order] * self.n_items + self.flat_items

    def _rated(self, u, j):
        key = u * self.n_items + j
        pos = np.searchsorted(self.keys, key)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == key

    def draw(self, rng: np.random.Generator, n: int):
        u = self.users[rng.integers(0, len(self.users), size=n)]
        i = self.flat_items[self.starts[u] + rng.integers(0, self.counts[u])]
        j = rng.integers(0, self.n_items, size=n)
        bad = self._rated(u, j)
        while bad.any():
            idx = np.flatnonzero(bad)
            j[idx] = rng.integers(0, self.n_items, size=len(idx))
            bad[idx] = self._rated(u[idx], j[idx])
        return u, i, j


def train_bpr_mf(cv_train: Dataset, cfg: HyperConfig, seed: int, jit: bool = True) -> MfModel:
    """SGD on the BPR criterion; one iteration is ``len(cv_train)`` sampled triples."""
    if cfg.variant != BPR_MF:
        raise ConfigError(f"expected a BprMf config, got {cfg.variant}")
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, INIT_STD, size=(cv_train.n_users, cfg.factors))
    Q = rng.normal(0.0, INIT_STD, size=(cv_train.n_items, cfg.factors))
    lr = cfg.learning_rate
    sampler = _TripleSampler(cv_train)
    step = _sgd_pass if jit else _sgd_pass_py
    if len(sampler.users):
        for it in range(1, cfg.iterations + 1):
            u, i, j = sampler.draw(rng, len(cv_train))
            step(P, Q, u, i, j, lr, lr * USER_REG_SCALE, lr * ITEM_REG_SCALE)
            if not (np.isfinite(P).all() and np.isfinite(Q).all()):
                raise TrainingDivergedError(it)
    P.setflags(write=False)
    Q.setflags(write=False)
    return MfModel(P, Q, cfg, seed)


def train(cv_train: Dataset, cfg: HyperConfig, seed: int):
    if cfg.variant == USER_KNN:
        return train_user_knn(cv_train, cfg.neighbors)
    if cfg.variant == ITEM_KNN:
        return train_item_knn(cv_train, cfg.neighbors)
    return train_bpr_mf(cv_train, cfg, seed)


# ---------------------------------------------------------------- ranking


def _rank(user, scores, exclude, N):
    cand = np.ones(len(scores), dtype=bool)
    cand[exclude] = False
    items = np.flatnonzero(cand)
    s = scores[items]
    order = np.lexsort((items, -s))[:N]
    return RankedList(int(user), items[order], s[order])


def recommend_top_n(model, user: int, cv_train: Dataset, N: int) -> RankedList:
    """Top-``N`` unrated items for ``user`` by (score desc, item id asc)."""
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if not 0 <= user < min(model.n_users, cv_train.n_users):
        return RankedList(int(user), np.empty(0, dtype=np.int64), np.empty(0))
    scores = model.score_matrix([user])[0]
    return _rank(user, scores, cv_train.user_items()[user], N)


def recommend_many(model, users, cv_train: Dataset, N: int, block: int = 512) -> dict:
    """:func:`recommend_top_n` for many users, scoring in blocks."""
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    users = np.asarray(users, dtype=np.int64)
    profiles = cv_train.user_items()
    out = {}
    known = users[(users >= 0) & (users < min(model.n_users, cv_train.n_users))]
    for lo in range(0, len(known), block):
        chunk = known[lo:lo + block]
        S = model.score_matrix(chunk)
        for r, u in enumerate(chunk):
            out[int(u)] = _rank(u, S[r], profiles[u], N)
    for u in users:
        out.setdefault(int(u), RankedList(int(u), np.empty(0, dtype=np.int64), np.empty(0)))
    return out


# ---------------------------------------------------------------- persistence


def save_model(model, path) -> None:
    """Write a model to an ``.npz`` container with a JSON header."""
    if isinstance(model, MfModel):
        meta = {"kind": "mf", "config": model.config.to_dict(), "seed": model.seed,
                "n_users": model.n_users, "n_items": model.n_items}
        arrays = {"P": model.P, "Q": model.Q}
    else:
        R = model.ratings
        meta = {"kind": "knn", "orientation": model.orientation, "k": model.k,
                "n_users": model.n_users, "n_items": model.n_items}
        arrays = {"indptr": model.indptr, "indices": model.indices, "sims": model.sims,
                  "r_indptr": R.indptr, "r_indices": R.indices, "r_data": R.data}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta["kind"] == "mf":
            return MfModel(z["P"], z["Q"], HyperConfig.from_dict(meta["config"]), meta["seed"])
        R = sparse.csr_matrix((z["r_data"], z["r_indices"], z["r_indptr"]),
                              shape=(meta["n_users"], meta["n_items"]))
        return KnnModel(meta["orientation"], meta["k"], z["indptr"], z["indices"], z["sims"], R)
