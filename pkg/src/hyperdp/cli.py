"""Command-line driver: ``hyperdp {prepare,sweep,dp,dominant,grid}``.

Every option can be given in a JSON config file (``--config``) using the same
names with underscores; command-line flags override the file.

Output layout under ``output``::

    splits/   train.tsv, test.tsv, folds.tsv, stats.json
    store/    per (config, fold) metric vectors
    reports/  DP reports, p-value plot data, dominant tables
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import (DIMENSIONS, REFERENCE_GRID, GridSpec, best_row, build_grid,
                       dominant_analysis, dp_analysis, format_dominant_table, format_dp_table,
                       preset, run_grid, sample_pairs)
from .dataset import (InputFormat, filter_core, kfold_assign, load_interactions, read_folds,
                      sample_stratified, statistics, temporal_holdout, write_folds,
                      write_interactions)
from .errors import ConfigError, DataError, HyperDPError, SamplingError
from .metrics import METRICS
from .recommenders import VARIANTS
from .store import MetricStore
from .synthetic import movielens_100k_like, small_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3

SYNTHETIC = {"synthetic:ml100k": movielens_100k_like, "synthetic:small": small_corpus}


@dataclass
class RunConfig:
    dataset: str = "synthetic:ml100k"
    format: dict = field(default_factory=dict)
    min_user: int = 0
    min_item: int = 0
    sample_fraction: float = 1.0
    sample_seed: int = 0
    split_ratio: float = 0.8
    folds: int = 10
    fold_seed: int = 0
    tau: float = 4.0
    cutoff: int = 10
    algorithm: str = "BprMf"
    grid: object = "paper-default"
    pairs: int = 25
    master_seed: int = 0
    output: str = "hyperdp-out"
    strict_threshold: bool = False
    discounted_novelty: bool = False
    tails: int = 2
    metric: str = "ndcg"
    dimension: str | None = None
    workers: int = 0

    def validate(self):
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.pairs < 1:
            raise ConfigError("pairs must be >= 1")
        if self.cutoff < 1:
            raise ConfigError("cutoff must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must be in (0, 1)")
        if self.algorithm not in VARIANTS:
            raise ConfigError(f"algorithm must be one of {VARIANTS}")
        if self.tails not in (1, 2):
            raise ConfigError("tails must be 1 or 2")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        return self

    @property
    def config_hash(self) -> str:
        d = dataclasses.asdict(self)
        for volatile in ("output", "workers"):
            d.pop(volatile)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def header(self) -> str:
        return f"hyperdp {__version__} config={self.config_hash} master_seed={self.master_seed}"

    def grid_spec(self) -> GridSpec:
        if isinstance(self.grid, str):
            return preset(self.grid, self.algorithm)
        if isinstance(self.grid, dict):
            spec = dict(self.grid)
            if "dimensions" not in spec:
                spec = {"dimensions": spec}
            spec.setdefault("variant", self.algorithm)
            return GridSpec.from_dict(spec)
        raise ConfigError("grid must be a preset name or a dimension mapping")

    def input_format(self) -> InputFormat:
        fmt = dict(self.format)
        if "columns" in fmt:
            fmt["columns"] = tuple(fmt["columns"])
        return InputFormat(**fmt)

    @property
    def out(self) -> Path:
        return Path(self.output)


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _add_common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--dataset")
    p.add_argument("--delimiter")
    p.add_argument("--header", action="store_true", default=None)
    p.add_argument("--min-user", type=int)
    p.add_argument("--min-item", type=int)
    p.add_argument("--sample-fraction", type=float)
    p.add_argument("--sample-seed", type=int)
    p.add_argument("--split-ratio", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--fold-seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--cutoff", type=int)
    p.add_argument("--algorithm", choices=VARIANTS)
    p.add_argument("--grid", help="preset name or JSON mapping")
    p.add_argument("--pairs", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--output")
    p.add_argument("--strict-threshold", action="store_true", default=None)
    p.add_argument("--discounted-novelty", action="store_true", default=None)
    p.add_argument("--tails", type=int, choices=(1, 2))
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--workers", type=int, help="worker threads (0 = all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hyperdp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("prepare", "filter, sample and split the dataset; assign folds"),
        ("sweep", "train and evaluate every (config, fold) cell"),
        ("dp", "discriminative power of every metric over sampled pairs"),
        ("dominant", "per-value DP for one hyper-parameter dimension"),
        ("grid", "print a resolved grid"),
    ]:
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "dominant":
            p.add_argument("--dimension", help="dimension to analyse (default: all)")
    return parser


def load_config(args) -> RunConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(values) - set(FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "delimiter", None) is not None:
        values.setdefault("format", {})["delimiter"] = args.delimiter
    if getattr(args, "header", None):
        values.setdefault("format", {})["header"] = True
    if isinstance(values.get("grid"), str) and values["grid"].lstrip().startswith("{"):
        values["grid"] = json.loads(values["grid"])
    try:
        return RunConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _workers(cfg):
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------- commands


def cmd_prepare(cfg: RunConfig) -> int:
    if cfg.dataset in SYNTHETIC:
        data = SYNTHETIC[cfg.dataset](cfg.sample_seed)
    else:
        data = load_interactions(cfg.dataset, cfg.input_format())
    if cfg.min_user or cfg.min_item:
        data = filter_core(data, cfg.min_user, cfg.min_item)
    if cfg.sample_fraction < 1.0:
        data = sample_stratified(data, cfg.sample_fraction, cfg.sample_seed)
    split = temporal_holdout(data, cfg.split_ratio)
    fa = kfold_assign(split.train, cfg.folds, cfg.fold_seed)
    splits = cfg.out / "splits"
    splits.mkdir(parents=True, exist_ok=True)
    header = cfg.header()
    write_interactions(split.train, splits / "train.tsv", header)
    write_interactions(split.test, splits / "test.tsv", header)
    write_folds(split.train, fa, splits / "folds.tsv", f"{header} k={fa.k}")
    stats = statistics(data)
    summary = {"tool": f"hyperdp {__version__}", "config_hash": cfg.config_hash,
               "master_seed": cfg.master_seed, **stats,
               "sparsity_percent": f"{100 * stats['sparsity']:.2f}%",
               "train": split.train.n_interactions, "test": split.test.n_interactions,
               "folds": fa.k}
    (splits / "stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"users {stats['users']}  items {stats['items']}  ratings {stats['ratings']}  "
          f"sparsity {summary['sparsity_percent']}")
    print(f"train {summary['train']}  test {summary['test']}  folds {fa.k}")
    return EXIT_OK


def _load_splits(cfg):
    splits = cfg.out / "splits"
    if not (splits / "train.tsv").exists():
        raise DataError(f"{splits} has no prepared split; run 'hyperdp prepare' first")
    train = load_interactions(splits / "train.tsv")
    fa = read_folds(train, splits / "folds.tsv", cfg.folds)
    return train, fa


def _store(cfg):
    return MetricStore(cfg.out / "store")


def cmd_sweep(cfg: RunConfig) -> int:
    train, fa = _load_splits(cfg)
    grid = build_grid(cfg.grid_spec())
    store = _store(cfg)

    def progress(done, total, failed):
        print(f"\rcells {done}/{total}  failed {failed}", end="", file=sys.stderr, flush=True)

    summary = run_grid(grid, train, fa, store, N=cfg.cutoff, tau=cfg.tau,
                       master_seed=cfg.master_seed, strict=cfg.strict_threshold,
                       discount=cfg.discounted_novelty, workers=_workers(cfg),
                       header=cfg.header(), progress=progress)
    print(file=sys.stderr)
    print(f"{cfg.algorithm}: {summary.total} cells, {summary.computed} computed, "
          f"{summary.skipped} skipped, {len(summary.failed)} failed")
    return EXIT_TRAINING if summary.failed else EXIT_OK


def _report_path(cfg, stem):
    reports = cfg.out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    return reports / stem


def cmd_dp(cfg: RunConfig) -> int:
    train, _ = _load_splits(cfg)
    grid = build_grid(cfg.grid_spec())
    store = _store(cfg)
    pairs = sample_pairs(grid, cfg.pairs, cfg.master_seed)
    report = dp_analysis(store, pairs, METRICS, cfg.tails)
    report.master_seed = cfg.master_seed
    report.grid = grid
    report.dataset = train.fingerprint()
    doc = report.to_dict()
    doc["config_hash"] = cfg.config_hash
    stem = f"dp_{cfg.algorithm}"
    _report_path(cfg, f"{stem}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for metric, r in report.metrics.items():
        _report_path(cfg, f"{stem}_{metric}.tsv").write_text(r.curve.to_plot_data(cfg.header()))
    print(f"{cfg.algorithm}  (m={report.m}, folds={store.n_folds})")
    print(format_dp_table(report))
    return EXIT_OK


def cmd_dominant(cfg: RunConfig, dimension: str | None = None) -> int:
    grid = build_grid(cfg.grid_spec())
    store = _store(cfg)
    dims = [dimension] if dimension else list(DIMENSIONS[cfg.algorithm])
    for dim in dims:
        rows = dominant_analysis(store, grid, dim, cfg.metric, cfg.pairs, cfg.master_seed, cfg.tails)
        text = format_dominant_table(dim, rows, f"{cfg.header()} metric={cfg.metric}")
        _report_path(cfg, f"dominant_{cfg.algorithm}_{dim}.tsv").write_text(text)
        best = best_row(rows)
        print(f"{dim} ({cfg.metric}):")
        for r in rows:
            dp = "   n/a" if r.dp is None else f"{r.dp:.3f}"
            flag = "  *best*" if r is best else ""
            short = f"  (only {r.pairs_used} pairs)" if r.shortfall else ""
            print(f"  {r.value:>12g}  {dp}{flag}{short}")
    return EXIT_OK


def cmd_grid(cfg: RunConfig, explicit_algorithm: bool) -> int:
    if isinstance(cfg.grid, str) and cfg.grid == "paper-default" and not explicit_algorithm:
        dims = {name: REFERENCE_GRID[name] for name in
                ("factors", "iterations", "learning_rate", "neighbors")}
        count = len(build_grid(preset("paper-default", "BprMf")))
        variant = "BprMf"
    else:
        spec = cfg.grid_spec()
        dims = spec.resolved()
        count = len(build_grid(spec))
        variant = spec.variant
    for name, vals in dims.items():
        fmt = "{:.10g}" if name == "learning_rate" else "{}"
        print(f"{name} ({len(vals)}): " + " ".join(fmt.format(v) for v in vals))
    print(f"{variant} configurations: {count}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "dp":
            return cmd_dp(cfg)
        if args.command == "dominant":
            return cmd_dominant(cfg, cfg.dimension)
        return cmd_grid(cfg, args.algorithm is not None)
    except (ConfigError, SamplingError) as exc:
        print(f"hyperdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"hyperdp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HyperDPError as exc:
        print(f"hyperdp: error: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
