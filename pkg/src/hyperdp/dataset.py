"""Rating logs: ingestion, core filtering, sampling, temporal split and k-fold assignment.

A :class:`Dataset` stores interactions column-wise in numpy arrays.  Users and
items carry dense internal ids (``0..n_users-1``, ``0..n_items-1``) plus the
original labels.  Row order is meaningful: it is the input-file order, and it
is used to break timestamp ties.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyDatasetError, ParseError

COLUMNS = ("user", "item", "rating", "timestamp")


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int


@dataclass(frozen=True)
class InputFormat:
    """How to read a delimiter-separated rating log.

    ``columns`` gives the field name of each column; it must contain the four
    names in :data:`COLUMNS` and may contain ``None`` for ignored columns.
    """

    delimiter: str = "\t"
    columns: tuple = COLUMNS
    header: bool = False
    comment: str | None = "#"
    rating_min: float = 1.0
    rating_max: float = 5.0

    def __post_init__(self):
        missing = set(COLUMNS) - set(c for c in self.columns if c)
        if missing:
            raise ConfigError(f"format is missing columns: {sorted(missing)}")
        if not self.delimiter:
            raise ConfigError("delimiter must be non-empty")

    @classmethod
    def movielens(cls) -> "InputFormat":
        """The ``user::item::rating::timestamp`` layout of MovieLens-1M."""
        return cls(delimiter="::")


TSV = InputFormat()


@dataclass(frozen=True, eq=False)
class Dataset:
    user: np.ndarray
    item: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray
    user_labels: np.ndarray
    item_labels: np.ndarray
    _user_items: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("user", "item", "rating", "timestamp"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if not (len(self.user) == len(self.item) == len(self.rating) == len(self.timestamp)):
            raise ValueError("column lengths differ")

    @property
    def n_users(self) -> int:
        return len(self.user_labels)

    @property
    def n_items(self) -> int:
        return len(self.item_labels)

    @property
    def n_interactions(self) -> int:
        return len(self.user)

    def __len__(self):
        return len(self.user)

    def __iter__(self) -> Iterator[Interaction]:
        ul, il = self.user_labels, self.item_labels
        for u, i, r, t in zip(self.user, self.item, self.rating, self.timestamp):
            yield Interaction(ul[u], il[i], float(r), int(t))

    @classmethod
    def from_records(cls, records: Sequence) -> "Dataset":
        """Build from ``(user, item, rating, timestamp)`` tuples, ids by first appearance.

        No deduplication is done here; see :func:`load_interactions`.
        """
        users = [str(r[0]) for r in records]
        items = [str(r[1]) for r in records]
        ratings = np.array([float(r[2]) for r in records], dtype=np.float64)
        stamps = np.array([int(r[3]) for r in records], dtype=np.int64)
        u_idx, u_labels = _densify_labels(users)
        i_idx, i_labels = _densify_labels(items)
        return cls(u_idx, i_idx, ratings, stamps, u_labels, i_labels)

    def subset(self, mask_or_index, densify: bool = False) -> "Dataset":
        """Rows selected by a boolean mask or sorted index array.

        With ``densify=False`` the id spaces (and labels) are inherited.
        """
        sel = np.asarray(mask_or_index)
        u, i = self.user[sel], self.item[sel]
        ul, il = self.user_labels, self.item_labels
        if densify:
            u, ul = _reindex(u, ul)
            i, il = _reindex(i, il)
        return Dataset(u.copy(), i.copy(), self.rating[sel].copy(), self.timestamp[sel].copy(), ul, il)

    def user_items(self) -> list:
        """Per user, the sorted array of item ids rated (cached)."""
        if self._user_items is None:
            order = np.lexsort((self.item, self.user))
            bounds = np.searchsorted(self.user[order], np.arange(self.n_users + 1))
            items = self.item[order]
            lists = [items[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]
            object.__setattr__(self, "_user_items", lists)
        return self._user_items

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.user, minlength=self.n_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.item, minlength=self.n_items)

    def to_csr(self):
        """User x item rating matrix as ``scipy.sparse.csr_matrix``."""
        from scipy import sparse

        return sparse.csr_matrix(
            (self.rating, (self.user, self.item)), shape=(self.n_users, self.n_items)
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.user, self.item, self.rating, self.timestamp):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x1f".join(self.user_labels).encode())
        h.update("\x1e".join(self.item_labels).encode())
        return h.hexdigest()

    def same_rows(self, other: "Dataset") -> bool:
        """Row-by-row equality on labels, ratings and timestamps."""
        if len(self) != len(other):
            return False
        return (
            np.array_equal(self.user_labels[self.user], other.user_labels[other.user])
            and np.array_equal(self.item_labels[self.item], other.item_labels[other.item])
            and np.array_equal(self.rating, other.rating)
            and np.array_equal(self.timestamp, other.timestamp)
        )


def _densify_labels(labels):
    index = {}
    ids = np.empty(len(labels), dtype=np.int64)
    for n, lab in enumerate(labels):
        ids[n] = index.setdefault(lab, len(index))
    out = np.empty(len(index), dtype=object)
    out[:] = list(index)
    return ids, out


def _reindex(ids, labels):
    # first-appearance order among the surviving rows
    uniq, first = np.unique(ids, return_index=True)
    order = uniq[np.argsort(first, kind="stable")]
    remap = np.full(len(labels), -1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return remap[ids], labels[order]


def sparsity(n_users: int, n_items: int, n_interactions: int) -> float:
    """Fraction of empty cells in the user x item matrix."""
    return 1.0 - n_interactions / (n_users * n_items)


def statistics(d: Dataset) -> dict:
    return {
        "users": int(len(np.unique(d.user))),
        "items": int(len(np.unique(d.item))),
        "ratings": d.n_interactions,
        "sparsity": sparsity(len(np.unique(d.user)), len(np.unique(d.item)), d.n_interactions),
    }


def load_interactions(path, fmt: InputFormat = TSV) -> Dataset:
    """Read a rating log.

    Duplicate ``(user, item)`` pairs keep the record with the latest timestamp
    (the later line on equal timestamps); ids follow first appearance.
    """
    path = Path(path)
    cols = {name: n for n, name in enumerate(fmt.columns) if name}
    width = len(fmt.columns)
    rows = []
    latest = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if fmt.header and lineno == 1:
                continue
            if not line.strip() or (fmt.comment and line.startswith(fmt.comment)):
                continue
            parts = line.split(fmt.delimiter)
            if len(parts) != width:
                raise ParseError(path, lineno, f"expected {width} fields, got {len(parts)}")
            user = parts[cols["user"]].strip()
            item = parts[cols["item"]].strip()
            if not user or not item:
                raise ParseError(path, lineno, "empty user or item id")
            try:
                rating = float(parts[cols["rating"]])
            except ValueError:
                raise ParseError(path, lineno, f"bad rating {parts[cols['rating']]!r}") from None
            try:
                stamp = int(parts[cols["timestamp"]])
            except ValueError:
                raise ParseError(path, lineno, f"bad timestamp {parts[cols['timestamp']]!r}") from None
            if not (fmt.rating_min <= rating <= fmt.rating_max):
                raise ParseError(path, lineno, f"rating {rating} outside [{fmt.rating_min}, {fmt.rating_max}]")
            key = (user, item)
            prev = latest.get(key)
            if prev is None or rows[prev][3] <= stamp:
                latest[key] = len(rows)
            rows.append((user, item, rating, stamp))
    if not rows:
        raise EmptyDatasetError(f"{path}: no interactions")
    keep = sorted(latest.values())
    u_idx, u_labels = _densify_labels([r[0] for r in rows])
    i_idx, i_labels = _densify_labels([r[1] for r in rows])
    keep = np.array(keep, dtype=np.int64)
    d = Dataset(
        u_idx[keep],
        i_idx[keep],
        np.array([rows[k][2] for k in keep], dtype=np.float64),
        np.array([rows[k][3] for k in keep], dtype=np.int64),
        u_labels,
        i_labels,
    )
    # labels of users/items whose only rows were duplicates are still present
    return d.subset(np.arange(len(d)), densify=True)


def write_interactions(d: Dataset, path, header: str | None = None) -> None:
    """Write the canonical ``user<TAB>item<TAB>rating<TAB>timestamp`` form."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"# {header}\n")
        for it in d:
            fh.write(f"{it.user}\t{it.item}\t{it.rating:g}\t{it.timestamp}\n")


def filter_core(d: Dataset, min_user: int, min_item: int) -> Dataset:
    """Drop users with < ``min_user`` rows, then items with < ``min_item`` rows (one pass)."""
    if min_user < 0 or min_item < 0:
        raise ConfigError("thresholds must be non-negative")
    keep = d.user_counts()[d.user] >= min_user
    item_counts = np.bincount(d.item[keep], minlength=d.n_items)
    keep &= item_counts[d.item] >= min_item
    if not keep.any():
        raise EmptyDatasetError("core filtering removed every interaction")
    return d.subset(keep, densify=True)


def sample_stratified(d: Dataset, fraction: float, seed: int) -> Dataset:
    """Sample ``ceil(fraction * n)`` rows per rating value, without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    chosen = []
    for value in np.unique(d.rating):
        idx = np.flatnonzero(d.rating == value)
        size = min(len(idx), math.ceil(fraction * len(idx) - 1e-9))
        chosen.append(rng.choice(idx, size=size, replace=False))
    keep = np.sort(np.concatenate(chosen))
    if len(keep) == 0:
        raise EmptyDatasetError("sampling produced no interactions")
    return d.subset(keep, densify=True)


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: Dataset
    test: Dataset
    ratio: float


def _user_stable_order(d: Dataset) -> np.ndarray:
    return np.lexsort((np.arange(len(d)), d.timestamp, d.user))


def _rank_within_user(d: Dataset, order: np.ndarray) -> np.ndarray:
    """Position of each row inside its user's ordering."""
    counts = d.user_counts()
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    rank = np.empty(len(d), dtype=np.int64)
    rank[order] = np.arange(len(d)) - starts[d.user[order]]
    return rank


def temporal_holdout(d: Dataset, ratio: float = 0.8) -> SplitPair:
    """Per user, the earliest ``ceil(ratio * n_u)`` interactions train, the rest test.

    Ties in timestamp are broken by row order.  Both halves keep ``d``'s id space.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"ratio must be in (0, 1), got {ratio}")
    order = _user_stable_order(d)
    rank = _rank_within_user(d, order)
    n_train = np.ceil(ratio * d.user_counts() - 1e-9).astype(np.int64)
    in_train = rank < n_train[d.user]
    return SplitPair(d.subset(in_train), d.subset(~in_train), ratio)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    k: int
    assignment: np.ndarray

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def kfold_assign(train: Dataset, k: int, seed: int) -> FoldAssignment:
    """Shuffle each user's rows and deal them round-robin to folds ``0..k-1``."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(train), dtype=np.int64)
    order = np.argsort(train.user, kind="stable")
    bounds = np.searchsorted(train.user[order], np.arange(train.n_users + 1))
    for u in range(train.n_users):
        rows = order[bounds[u]:bounds[u + 1]]
        if len(rows):
            assignment[rng.permutation(rows)] = np.arange(len(rows)) % k
    assignment.setflags(write=False)
    return FoldAssignment(k, assignment)


def fold_view(train: Dataset, fa: FoldAssignment, held_out: int) -> tuple[Dataset, Dataset]:
    """``(cv_train, cv_valid)`` holding out one fold; ids are inherited from ``train``."""
    if not 0 <= held_out < fa.k:
        raise ConfigError(f"held_out must be in [0, {fa.k}), got {held_out}")
    if len(fa.assignment) != len(train):
        raise ConfigError("fold assignment does not match the training set")
    valid = fa.assignment == held_out
    return train.subset(~valid), train.subset(valid)


def write_folds(train: Dataset, fa: FoldAssignment, path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"# {header}\n")
        for it, f in zip(train, fa.assignment):
            fh.write(f"{it.user}\t{it.item}\t{int(f)}\n")


def read_folds(train: Dataset, path, k: int | None = None) -> FoldAssignment:
    folds = []
    rows = iter(train)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, "expected user, item, fold")
            row = next(rows, None)
            if row is not None and (parts[0], parts[1]) != (str(row.user), str(row.item)):
                raise ParseError(path, lineno, "row does not match the training set")
            try:
                folds.append(int(parts[2]))
            except ValueError:
                raise ParseError(path, lineno, f"bad fold index {parts[2]!r}") from None
    if len(folds) != len(train):
        raise ParseError(path, len(folds), f"fold file has {len(folds)} rows, training set {len(train)}")
    arr = np.array(folds, dtype=np.int64)
    arr.setflags(write=False)
    k = int(arr.max()) + 1 if k is None else k
    if arr.min() < 0 or arr.max() >= k:
        raise ParseError(path, 0, f"fold index outside [0, {k})")
    return FoldAssignment(k, arr)
