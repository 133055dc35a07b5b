"""Hyper-parameter grids, pair sampling, cross-validated sweeps and DP analyses."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dataset import Dataset, FoldAssignment, fold_view
from .errors import (ConfigError, FailedCellsError, HyperDPError, InsufficientDataError,
                     SamplingError)
from .metrics import METRICS, LABELS, PopularityModel, evaluate_system, judge
from .recommenders import BPR_MF, ITEM_KNN, USER_KNN, VARIANTS, HyperConfig, recommend_many, train
from .stats import PValueCurve, build_curve, discriminative_power, paired_t_test
from .store import FAILED, MetricStore

log = logging.getLogger(__name__)

DIMENSIONS = {
    USER_KNN: ("neighbors",),
    ITEM_KNN: ("neighbors",),
    BPR_MF: ("factors", "iterations", "learning_rate"),
}

# Default hyper-parameter values (the ``paper-default`` preset).
REFERENCE_GRID = {
    "factors": [10, 14, 20, 28, 40, 57, 80, 113, 160, 226, 320, 452, 640, 905, 1809],
    "iterations": [1, 2, 3, 4, 6, 8, 11, 16, 23, 32, 45, 64, 91, 128],
    "learning_rate": [
        0.200003894816316, 0.100001947408158, 0.050000973704079, 0.0250004868520395,
        0.0125002434260198, 0.00625012171300988, 0.00312506085650494, 0.00156253042825247,
        0.000781265214126235, 0.000390632607063118, 0.000195316303531559,
        0.0000976581517657794, 0.0000488290758828897, 0.0000244145379414449,
        0.0000122072689707224,
    ],
    "neighbors": [10, 14, 20, 28, 40, 57, 80, 113, 160, 226, 320, 452, 640, 905, 1809],
}


@dataclass(frozen=True)
class ExponentialRange:
    """``base ** e`` for ``e`` from ``start`` to ``end`` (inclusive) in steps of ``step``."""

    start: float
    end: float
    step: float
    base: float = 2.0
    rounding: str = "nearest"
    dedupe: bool = True

    def exponents(self) -> list:
        if self.step == 0:
            raise ConfigError("exponent step must be non-zero")
        step = abs(self.step) if self.end >= self.start else -abs(self.step)
        n = math.floor((self.end - self.start) / step + 1e-9) + 1
        return [self.start + k * step for k in range(n)]

    def values(self) -> list:
        vals = [self.base ** e for e in self.exponents()]
        if self.rounding == "nearest":
            vals = [int(math.floor(v + 0.5)) for v in vals]
        elif self.rounding != "none":
            raise ConfigError(f"unknown rounding {self.rounding!r}")
        if self.dedupe:
            vals = list(dict.fromkeys(vals))
        return vals

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class GridSpec:
    variant: str
    dimensions: dict  # name -> list of values or ExponentialRange

    def resolved(self) -> dict:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        names = DIMENSIONS[self.variant]
        if set(self.dimensions) != set(names):
            raise ConfigError(f"{self.variant} grid needs dimensions {names}, got {sorted(self.dimensions)}")
        out = {}
        for name in names:
            spec = self.dimensions[name]
            vals = spec.values() if isinstance(spec, ExponentialRange) else list(spec)
            if not vals:
                raise ConfigError(f"dimension {name!r} is empty")
            out[name] = vals
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        dims = {}
        for name, spec in d["dimensions"].items():
            dims[name] = ExponentialRange.from_dict(spec) if isinstance(spec, dict) else list(spec)
        return cls(d["variant"], dims)


def reference_grid(variant: str) -> GridSpec:
    return GridSpec(variant, {n: list(REFERENCE_GRID[n]) for n in DIMENSIONS[variant]})


def formula_grid(variant: str) -> GridSpec:
    """The base-2 generators behind :data:`REFERENCE_GRID`.

    The factors generator also yields 1279 (exponent 10.321), which the
    default list omits; the learning-rate exponent steps by 1.
    """
    factors = ExponentialRange(3.321, 10.821, 0.5)
    gens = {
        "factors": factors,
        "neighbors": factors,
        "iterations": ExponentialRange(0.0, 7.0, 0.5),
        "learning_rate": ExponentialRange(-2.3219, -16.3219, 1.0, rounding="none"),
    }
    return GridSpec(variant, {n: gens[n] for n in DIMENSIONS[variant]})


PRESETS = {"paper-default": reference_grid, "formula": formula_grid}


def preset(name: str, variant: str) -> GridSpec:
    try:
        return PRESETS[name](variant)
    except KeyError:
        raise ConfigError(f"unknown grid preset {name!r}") from None


def _make(variant, values: dict) -> HyperConfig:
    return HyperConfig(variant, **values)


def build_grid(spec: GridSpec) -> list:
    """Cartesian product of the resolved dimensions, in dimension order."""
    dims = spec.resolved()
    names = list(dims)
    return [_make(spec.variant, dict(zip(names, combo)))
            for combo in itertools.product(*(dims[n] for n in names))]


def grid_dimensions(grid) -> dict:
    """Distinct values of each dimension, in order of first appearance."""
    if not grid:
        raise ConfigError("empty grid")
    out = {}
    for cfg in grid:
        for name, v in cfg.dimensions.items():
            out.setdefault(name, {})[v] = None
    return {n: list(vs) for n, vs in out.items()}


def subgrid_around_best(grid, best: HyperConfig, radius) -> list:
    """Per dimension, the best value's index +/- radius (clipped); then their product.

    ``radius`` is an int or a mapping dimension -> int.
    """
    if best not in grid:
        raise ConfigError("best configuration is not in the grid")
    dims = grid_dimensions(grid)
    out = {}
    for name, vals in dims.items():
        r = radius[name] if isinstance(radius, dict) else radius
        if r < 0:
            raise ConfigError("radius must be non-negative")
        pos = vals.index(best.dimensions[name])
        out[name] = vals[max(0, pos - r):pos + r + 1]
    names = list(out)
    return [_make(best.variant, dict(zip(names, combo)))
            for combo in itertools.product(*(out[n] for n in names))]


# ---------------------------------------------------------------- pairs


@dataclass(frozen=True)
class PairSample:
    pairs: tuple  # of (HyperConfig, HyperConfig)
    seed: int | None = None
    constraint: tuple | None = None  # (dimension, value)
    universe_size: int = 0

    @property
    def m(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "constraint": list(self.constraint) if self.constraint else None,
                "universe_size": self.universe_size,
                "pairs": [[a.to_dict(), b.to_dict()] for a, b in self.pairs]}


def _constrained(grid, constraint):
    if constraint is None:
        return list(grid)
    dim, value = constraint
    return [c for c in grid if c.dimensions.get(dim) == value]


def _decode_pairs(linear: np.ndarray, n: int):
    # row a holds pairs (a, a+1..n-1); offsets[a] = index of (a, a+1)
    a_idx = np.arange(n - 1)
    offsets = a_idx * n - a_idx * (a_idx + 1) // 2
    a = np.searchsorted(offsets, linear, side="right") - 1
    b = linear - offsets[a] + a + 1
    return a, b


def all_pairs(grid, constraint=None) -> PairSample:
    configs = _constrained(grid, constraint)
    pairs = tuple(itertools.combinations(configs, 2))
    return PairSample(pairs, None, constraint, len(pairs))


def sample_pairs(grid, m: int, seed: int, constraint=None) -> PairSample:
    """Draw ``m`` distinct unordered pairs, uniformly, from the (constrained) grid.

    The pair universe is indexed in canonical ``(a < b)`` order and ``m`` indices
    are drawn without replacement.
    """
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    configs = _constrained(grid, constraint)
    n = len(configs)
    universe = n * (n - 1) // 2
    if universe < m:
        raise SamplingError(f"pair universe has {universe} pairs, {m} requested", universe)
    rng = np.random.default_rng(seed)
    linear = rng.choice(universe, size=m, replace=False)
    a, b = _decode_pairs(linear.astype(np.int64), n)
    pairs = tuple((configs[i], configs[j]) for i, j in zip(a, b))
    return PairSample(pairs, seed, constraint, universe)


# ---------------------------------------------------------------- sweep


def cell_seed(master_seed: int, config_index: int, fold: int) -> int:
    return int(np.random.SeedSequence([master_seed, config_index, fold]).generate_state(1)[0])


@dataclass
class SweepSummary:
    total: int = 0
    computed: int = 0
    skipped: int = 0
    failed: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class _FoldContext:
    fold: int
    cv_train: Dataset
    rel: dict
    pop: PopularityModel
    users: np.ndarray


def sweep_context(train: Dataset, fa: FoldAssignment, N: int, tau: float,
                  master_seed: int, strict: bool = False, discount: bool = False) -> dict:
    return {
        "train": train.fingerprint(),
        "folds": hashlib.sha256(np.ascontiguousarray(fa.assignment).tobytes()).hexdigest(),
        "k": fa.k, "N": N, "tau": tau, "strict": strict, "discount": discount,
        "master_seed": master_seed,
    }


def _run_cell(cfg, idx, ctx: _FoldContext, N, master_seed, discount):
    seed = cell_seed(master_seed, idx, ctx.fold)
    try:
        model = train(ctx.cv_train, cfg, seed)
        lists = recommend_many(model, ctx.users, ctx.cv_train, N)
        mats = evaluate_system(lists, ctx.rel, ctx.pop, N, cfg.config_id, ctx.fold, discount)
    except HyperDPError as exc:
        return cfg, ctx.fold, seed, None, f"{type(exc).__name__}: {exc}"
    return cfg, ctx.fold, seed, mats, None


def run_grid(grid, train: Dataset, fa: FoldAssignment, store: MetricStore, N: int = 10,
             tau: float = 4.0, master_seed: int = 0, strict: bool = False,
             discount: bool = False, workers: int = 1, header: str | None = None,
             progress=None) -> SweepSummary:
    """Train, recommend and evaluate every (config, fold) cell into ``store``.

    Cells already completed under the same context are skipped.  Training
    failures are recorded in the store, not raised.
    """
    context = sweep_context(train, fa, N, tau, master_seed, strict, discount)
    store.set_context(fa.k, context)
    if header is None:
        header = f"hyperdp {__version__} context={store.context_hash} master_seed={master_seed}"
    store.set_context(fa.k, context, header)
    summary = SweepSummary(total=len(grid) * fa.k)
    todo = [(idx, cfg, f) for idx, cfg in enumerate(grid) for f in range(fa.k)
            if store.status(cfg, f) is None]
    summary.skipped = summary.total - len(todo)
    summary.failed = [(cfg, f) for cfg in grid for f in range(fa.k) if store.status(cfg, f) == FAILED]
    contexts = {}
    for f in sorted({f for _, _, f in todo}):
        cv_train, cv_valid = fold_view(train, fa, f)
        rel = judge(cv_valid, tau, strict)
        users = np.array([u for u, r in rel.items() if r], dtype=np.int64)
        contexts[f] = _FoldContext(f, cv_train, rel, PopularityModel.from_dataset(cv_train), users)

    def record(result):
        cfg, fold, seed, mats, err = result
        if err is None:
            store.put(cfg, fold, mats, seed, header)
            summary.computed += 1
        else:
            log.warning("cell %s fold %d failed: %s", cfg.label(), fold, err)
            store.put_failure(cfg, fold, seed, err, header)
            summary.failed.append((cfg, fold))
        if progress:
            progress(summary.skipped + summary.computed + len(summary.failed), summary.total,
                     len(summary.failed))

    if workers <= 1:
        for idx, cfg, f in todo:
            record(_run_cell(cfg, idx, contexts[f], N, master_seed, discount))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, cfg, idx, contexts[f], N, master_seed, discount)
                       for idx, cfg, f in todo]
            for fut in futures:
                record(fut.result())
    return summary


# ---------------------------------------------------------------- DP


@dataclass(frozen=True, eq=False)
class MetricDP:
    metric: str
    curve: PValueCurve
    dp: float
    dp_plus_sigma: float


@dataclass(eq=False)
class DPReport:
    metrics: dict  # metric -> MetricDP
    pairs: tuple
    dropped: list = field(default_factory=list)  # (pair, reason)
    seed: int | None = None
    master_seed: int | None = None
    grid: list | None = None
    dataset: str | None = None

    @property
    def m(self) -> int:
        return len(self.pairs)

    def best(self) -> str:
        return min(self.metrics, key=lambda k: (self.metrics[k].dp, k))

    def worst(self) -> str:
        return max(self.metrics, key=lambda k: (self.metrics[k].dp, k))

    def to_dict(self) -> dict:
        return {
            "tool": f"hyperdp {__version__}",
            "dataset": self.dataset,
            "seed": self.seed,
            "master_seed": self.master_seed,
            "grid": [c.to_dict() for c in self.grid] if self.grid is not None else None,
            "pairs": [[a.to_dict(), b.to_dict()] for a, b in self.pairs],
            "dropped": [{"pair": [a.to_dict(), b.to_dict()], "reason": r}
                        for (a, b), r in self.dropped],
            "metrics": {
                k: {"dp": v.dp, "dp_plus_sigma": v.dp_plus_sigma, "curve": v.curve.to_dict()}
                for k, v in self.metrics.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _aligned(store, a, b, fold, metric):
    x, y = store.get(a, fold, metric), store.get(b, fold, metric)
    common, ix, iy = np.intersect1d(x.users, y.users, assume_unique=True, return_indices=True)
    return x.values[ix], y.values[iy], len(common)


def dp_analysis(store: MetricStore, pairs, metrics=METRICS, tails: int = 2) -> DPReport:
    """Per-fold paired t-tests for each pair, folded into a p-value curve per metric.

    Pairs touching failed cells, or with fewer than two common users in some
    fold, are dropped for every metric and listed in the report.
    """
    sample = pairs if isinstance(pairs, PairSample) else PairSample(tuple(pairs))
    metrics = list(metrics)
    folds = store.folds()
    kept, dropped = [], []
    for a, b in sample.pairs:
        states = {store.status(c, f) for c in (a, b) for f in folds}
        if None in states:
            raise FailedCellsError(f"missing cells for pair {a.label()} / {b.label()}")
        if FAILED in states:
            dropped.append(((a, b), "failed cell"))
            continue
        if any(_aligned(store, a, b, f, metrics[0])[2] < 2 for f in folds):
            dropped.append(((a, b), "fewer than 2 common users"))
            continue
        kept.append((a, b))
    if not kept:
        raise InsufficientDataError("no usable pairs for DP analysis")
    result = {}
    for metric in metrics:
        per_fold = []
        for f in folds:
            per_fold.append([paired_t_test(*_aligned(store, a, b, f, metric)[:2], tails=tails)
                             for a, b in kept])
        curve = build_curve(per_fold, metric)
        dp, dps = discriminative_power(curve)
        result[metric] = MetricDP(metric, curve, dp, dps)
    return DPReport(result, tuple(kept), dropped, seed=sample.seed)


@dataclass(frozen=True)
class DominantRow:
    value: object
    dp: float | None
    dp_plus_sigma: float | None
    pairs_used: int
    shortfall: bool


def dominant_analysis(store: MetricStore, grid, dimension: str, metric: str = "ndcg",
                      m: int = 25, seed: int = 0, tails: int = 2) -> list:
    """DP of ``metric`` over pairs sharing each value of ``dimension``, sorted by value."""
    dims = grid_dimensions(grid)
    if dimension not in dims:
        raise ConfigError(f"grid has no dimension {dimension!r}")
    rows = []
    for value in sorted(dims[dimension]):
        constraint = (dimension, value)
        try:
            sample = sample_pairs(grid, m, seed, constraint)
            short = False
        except SamplingError:
            sample = all_pairs(grid, constraint)
            short = True
        if sample.m == 0:
            rows.append(DominantRow(value, None, None, 0, True))
            continue
        report = dp_analysis(store, sample, [metric], tails)
        r = report.metrics[metric]
        rows.append(DominantRow(value, r.dp, r.dp_plus_sigma, report.m, short))
    return rows


def best_row(rows) -> DominantRow | None:
    scored = [r for r in rows if r.dp is not None]
    return min(scored, key=lambda r: r.dp) if scored else None


# ---------------------------------------------------------------- text output


def format_dp_table(report: DPReport) -> str:
    """One line per metric; the lowest DP is wrapped in ``**`` and the highest flagged."""
    best, worst = report.best(), report.worst()
    lines = [f"{'metric':<8} {'DP':>10} {'DP+sigma':>10}"]
    for metric, r in report.metrics.items():
        dp = f"{r.dp:.3f}"
        if metric == best:
            dp = f"**{dp}**"
        mark = "  <- worst" if metric == worst and best != worst else ""
        lines.append(f"{LABELS.get(metric, metric):<8} {dp:>10} {r.dp_plus_sigma:>10.3f}{mark}")
    lines.append(f"pairs: {report.m}, dropped: {len(report.dropped)}")
    return "\n".join(lines)


def format_dominant_table(dimension: str, rows, header: str | None = None) -> str:
    best = best_row(rows)
    lines = [f"# {header}"] if header else []
    lines.append(f"{dimension}\tDP\tDP_plus_sigma\tpairs\tshortfall\tbest")
    for r in rows:
        dp = "nan" if r.dp is None else f"{r.dp:.10g}"
        dps = "nan" if r.dp_plus_sigma is None else f"{r.dp_plus_sigma:.10g}"
        lines.append(f"{r.value:g}\t{dp}\t{dps}\t{r.pairs_used}\t{int(r.shortfall)}\t"
                     f"{'*' if r is best else ''}")
    return "\n".join(lines) + "\n"
