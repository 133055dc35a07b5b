"""Persistent store of per-user metric vectors, one cell per (config, fold).

Layout::

    <root>/store.json                     run context (folds, N, tau, ...)
    <root>/<config-id>/<fold>/cell.json   status, seed, content hashes
    <root>/<config-id>/<fold>/<metric>.tsv

A store without a root keeps everything in memory.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path

from .errors import ConfigError
from .metrics import PerUserMetricMatrix
from .recommenders import HyperConfig

OK = "ok"
FAILED = "failed"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


class MetricStore:
    def __init__(self, root=None, n_folds: int | None = None, context: dict | None = None):
        self.root = Path(root) if root is not None else None
        self._lock = threading.Lock()
        self._cells = {}
        self._cache = {}
        self.n_folds = n_folds
        self.context = context or {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            meta = self.root / "store.json"
            if meta.exists():
                saved = json.loads(meta.read_text())
                self.n_folds = self.n_folds or saved.get("n_folds")
                self.context = context or saved.get("context", {})

    @property
    def context_hash(self) -> str:
        return _sha256(json.dumps(self.context, sort_keys=True))[:16]

    def set_context(self, n_folds: int, context: dict, header: str | None = None) -> None:
        with self._lock:
            self.n_folds = n_folds
            self.context = context
            if self.root is not None:
                doc = {"n_folds": n_folds, "context": context, "header": header}
                text = json.dumps(doc, indent=2, sort_keys=True)
                _atomic_write(self.root / "store.json", text + "\n")

    def _cell_dir(self, cfg: HyperConfig, fold: int) -> Path:
        return self.root / cfg.config_id / str(fold)

    def _manifest(self, cfg, fold):
        key = (cfg.config_id, fold)
        if key in self._cells:
            return self._cells[key]
        if self.root is None:
            return None
        path = self._cell_dir(cfg, fold) / "cell.json"
        if not path.exists():
            return None
        manifest = json.loads(path.read_text())
        self._cells[key] = manifest
        return manifest

    def status(self, cfg: HyperConfig, fold: int) -> str | None:
        """``"ok"``, ``"failed"``, or ``None`` when missing, stale or corrupted."""
        manifest = self._manifest(cfg, fold)
        if manifest is None or manifest.get("context") != self.context_hash:
            return None
        if manifest["status"] == FAILED or self.root is None:
            return manifest["status"]
        cell = self._cell_dir(cfg, fold)
        for metric, digest in manifest["files"].items():
            path = cell / f"{metric}.tsv"
            if not path.exists() or _sha256(path.read_text(encoding="utf-8")) != digest:
                return None
        return OK

    def put(self, cfg: HyperConfig, fold: int, matrices: dict, seed: int,
            header: str | None = None) -> None:
        manifest = {"config": cfg.to_dict(), "config_id": cfg.config_id, "fold": fold,
                    "seed": int(seed), "status": OK, "context": self.context_hash, "files": {},
                    "header": header}
        texts = {m: mat.to_text(header) for m, mat in sorted(matrices.items())}
        for m, text in texts.items():
            manifest["files"][m] = _sha256(text)
        with self._lock:
            if self.root is not None:
                cell = self._cell_dir(cfg, fold)
                cell.mkdir(parents=True, exist_ok=True)
                for m, text in texts.items():
                    _atomic_write(cell / f"{m}.tsv", text)
                _atomic_write(cell / "cell.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
            self._cells[(cfg.config_id, fold)] = manifest
            for m, mat in matrices.items():
                self._cache[(cfg.config_id, fold, m)] = (
                    mat if self.root is None else PerUserMetricMatrix.from_text(texts[m]))

    def put_failure(self, cfg: HyperConfig, fold: int, seed: int, reason: str,
                    header: str | None = None) -> None:
        manifest = {"config": cfg.to_dict(), "config_id": cfg.config_id, "fold": fold,
                    "seed": int(seed), "status": FAILED, "reason": reason,
                    "context": self.context_hash, "files": {}, "header": header}
        with self._lock:
            if self.root is not None:
                cell = self._cell_dir(cfg, fold)
                cell.mkdir(parents=True, exist_ok=True)
                _atomic_write(cell / "cell.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
            self._cells[(cfg.config_id, fold)] = manifest

    def get(self, cfg: HyperConfig, fold: int, metric: str) -> PerUserMetricMatrix:
        key = (cfg.config_id, fold, metric)
        if key in self._cache:
            return self._cache[key]
        if self.root is None:
            raise KeyError(key)
        path = self._cell_dir(cfg, fold) / f"{metric}.tsv"
        if not path.exists():
            raise KeyError(key)
        mat = PerUserMetricMatrix.from_text(path.read_text(encoding="utf-8"), path)
        self._cache[key] = mat
        return mat

    def folds(self) -> range:
        if self.n_folds is None:
            raise ConfigError("store does not record its fold count")
        return range(self.n_folds)
