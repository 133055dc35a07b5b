"""Per-user accuracy and novelty metrics at a cut-off N.

Accuracy metrics use binary relevance: a validation item is relevant when its
rating reaches the threshold tau.  Novelty metrics (EFD, EPC) ignore relevance
and read item popularity from the training side of the same fold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import InsufficientDataError, ParseError

METRICS = ("ndcg", "precision", "recall", "mrr", "efd", "epc")
LABELS = {
    "ndcg": "nDCG@N",
    "precision": "Prec@N",
    "recall": "Rec@N",
    "mrr": "MRR@N",
    "efd": "EFD@N",
    "epc": "EPC@N",
}
DEFAULT_CUTOFF = 10
DEFAULT_TAU = 4.0


def _items(lst):
    return np.asarray(getattr(lst, "items", lst))


def _hits(lst, rel, N):
    top = _items(lst)[:N]
    rel = rel if isinstance(rel, (set, frozenset)) else set(np.asarray(rel).tolist())
    return np.fromiter((int(i) in rel for i in top), dtype=bool, count=len(top)), len(rel)


def judge(cv_valid: Dataset, tau: float = DEFAULT_TAU, strict: bool = False) -> dict:
    """Relevant items per user: validation rows rated ``>= tau`` (``> tau`` if strict)."""
    ok = cv_valid.rating > tau if strict else cv_valid.rating >= tau
    rel = {}
    for u, i in zip(cv_valid.user[ok], cv_valid.item[ok]):
        rel.setdefault(int(u), set()).add(int(i))
    return {u: frozenset(s) for u, s in sorted(rel.items())}


def precision_at(lst, rel, N: int) -> float:
    hits, _ = _hits(lst, rel, N)
    return hits.sum() / N


def recall_at(lst, rel, N: int) -> float:
    hits, n_rel = _hits(lst, rel, N)
    if n_rel == 0:
        raise InsufficientDataError("recall is undefined without relevant items")
    return hits.sum() / n_rel


def ndcg_at(lst, rel, N: int) -> float:
    hits, n_rel = _hits(lst, rel, N)
    if n_rel == 0:
        return 0.0
    dcg = sum(1.0 / math.log2(k + 2) for k in np.flatnonzero(hits))
    idcg = sum(1.0 / math.log2(k + 2) for k in range(min(N, n_rel)))
    return dcg / idcg


def mrr_at(lst, rel, N: int) -> float:
    hits, _ = _hits(lst, rel, N)
    first = np.flatnonzero(hits)
    return 1.0 / (first[0] + 1) if len(first) else 0.0


@dataclass(frozen=True, eq=False)
class PopularityModel:
    counts: np.ndarray
    seen: np.ndarray
    total: int
    n_users: int

    @classmethod
    def from_dataset(cls, cv_train: Dataset) -> "PopularityModel":
        counts = cv_train.item_counts()
        pairs = np.unique(cv_train.user * cv_train.n_items + cv_train.item)
        seen = np.bincount(pairs % cv_train.n_items, minlength=cv_train.n_items)
        return cls(counts, seen, int(counts.sum()), int(len(np.unique(cv_train.user))))

    def probability(self, items) -> np.ndarray:
        c = self.counts[np.asarray(items, dtype=np.int64)].astype(np.float64)
        return np.where(c > 0, c / self.total, 1.0 / (self.total + 1))


def _weights(n, discount):
    if not discount:
        return np.ones(n)
    return 1.0 / np.log2(np.arange(n) + 2.0)


def efd_at(lst, pop: PopularityModel, N: int, discount: bool = False) -> float:
    """Mean self-information ``-log2 p(i)`` of the top-N items."""
    top = _items(lst)[:N]
    if len(top) == 0:
        return 0.0
    w = _weights(len(top), discount)
    return float(np.sum(w * -np.log2(pop.probability(top))) / w.sum())


def epc_at(lst, pop: PopularityModel, N: int, discount: bool = False) -> float:
    """Mean of ``1 - seen(i) / n_users`` over the top-N items."""
    top = _items(lst)[:N]
    if len(top) == 0:
        return 0.0
    w = _weights(len(top), discount)
    nov = 1.0 - pop.seen[np.asarray(top, dtype=np.int64)] / pop.n_users
    return float(np.sum(w * nov) / w.sum())


@dataclass(frozen=True, eq=False)
class PerUserMetricMatrix:
    metric: str
    N: int
    config_id: str
    fold: int
    users: np.ndarray
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def __len__(self):
        return len(self.users)

    def to_text(self, header: str | None = None) -> str:
        lines = [f"# {header}"] if header else []
        lines.append(f"{self.metric}\t{self.N}\t{self.config_id}\t{self.fold}")
        lines.extend(f"{u}\t{v:.10g}" for u, v in zip(self.users, self.values))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path="<string>") -> "PerUserMetricMatrix":
        rows = [(n, l) for n, l in enumerate(text.splitlines(), start=1)
                if l and not l.startswith("#")]
        if not rows:
            raise ParseError(path, 1, "missing header row")
        lineno, head = rows[0]
        parts = head.split("\t")
        if len(parts) != 4:
            raise ParseError(path, lineno, "header must be metric, N, config id, fold")
        users, values = [], []
        for lineno, line in rows[1:]:
            u, _, v = line.partition("\t")
            try:
                users.append(int(u))
                values.append(float(v))
            except ValueError:
                raise ParseError(path, lineno, f"bad row {line!r}") from None
        return cls(parts[0], int(parts[1]), parts[2], int(parts[3]),
                   np.array(users, dtype=np.int64), np.array(values))


def evaluate_system(lists: dict, rel: dict, pop: PopularityModel, N: int = DEFAULT_CUTOFF,
                    config_id: str = "", fold: int = 0, discount: bool = False) -> dict:
    """One :class:`PerUserMetricMatrix` per metric over the evaluable users.

    A user is evaluable when it has at least one relevant validation item and a
    non-empty recommendation list.
    """
    users = sorted(u for u, r in rel.items() if r and u in lists and len(lists[u]) > 0)
    if not users:
        raise InsufficientDataError(f"fold {fold}: no evaluable users")
    vals = {m: np.empty(len(users)) for m in METRICS}
    for n, u in enumerate(users):
        lst, r = lists[u], rel[u]
        vals["ndcg"][n] = ndcg_at(lst, r, N)
        vals["precision"][n] = precision_at(lst, r, N)
        vals["recall"][n] = recall_at(lst, r, N)
        vals["mrr"][n] = mrr_at(lst, r, N)
        vals["efd"][n] = efd_at(lst, pop, N, discount)
        vals["epc"][n] = epc_at(lst, pop, N, discount)
    user_arr = np.array(users, dtype=np.int64)
    return {m: PerUserMetricMatrix(m, N, config_id, fold, user_arr, vals[m]) for m in METRICS}
