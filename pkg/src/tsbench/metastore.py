"""JSON Lines metadataset: per-config and per-epoch records.

Layout of a store directory::

    manifest.json            schema version, declared grids, dataset metafeatures
    <dataset>/configs.jsonl  one ConfigRecord per run (the commit marker)
    <dataset>/epochs.jsonl   one EpochLogRecord per completed epoch
    .lock                    present while a writer holds the store

A run's epoch lines are written and synced before its config line, so a
config record implies a complete set of epoch records. On open, a writer
drops torn trailing lines and epoch records without a config record.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import jsonio
from .errors import (
    CorruptLine,
    DuplicateConfig,
    EmptySelection,
    SchemaMismatch,
    StorageFailure,
    StoreLocked,
    UnknownMetric,
)
from .hpo.benchmark import TabularBenchmark
from .metrics import AGGREGATION, METRIC_KEYS
from .trainer import GRID_AXES, RunResult, TrainConfig
from .tsf import TimeSeriesDataset

SCHEMA_VERSION = 1
FORMAT = "tsbench-metastore"
CONFIG_FIELDS = tuple(TrainConfig.__dataclass_fields__)
SEARCH_FIELDS = tuple(k for k in GRID_AXES if k != "seed")


def dataset_metafeatures(ds: TimeSeriesDataset, horizon: int | None = None) -> dict:
    lengths = ds.lengths
    return {
        "frequency": ds.frequency,
        "seasonality": ds.seasonality,
        "horizon": int(horizon if horizon is not None else ds.horizon),
        "n_series": len(lengths),
        "min_len": min(lengths),
        "max_len": max(lengths),
    }


@dataclass
class ConfigRecord:
    config_id: str
    config: TrainConfig
    status: str
    param_count: int
    metafeatures: dict
    best_epoch: int | None = None
    n_epochs: int = 0
    runtime: float = 0.0
    final: dict = field(default_factory=dict)
    retrain_train_nll: list = field(default_factory=list)
    error: str | None = None

    @property
    def activation(self) -> str:
        return "none" if self.config.shape == "Base" else "ELU"

    def to_dict(self) -> dict:
        out = {"config_id": self.config_id}
        out.update(asdict(self.config))
        out.update(
            {
                "status": self.status,
                "param_count": self.param_count,
                "activation": self.activation,
            }
        )
        out.update({f"meta.{k}": v for k, v in self.metafeatures.items()})
        out.update({"best_epoch": self.best_epoch, "n_epochs": self.n_epochs, "runtime": self.runtime})
        out.update({f"final.{k}": v for k, v in self.final.items()})
        out["retrain_train_nll"] = list(self.retrain_train_nll)
        out["error"] = self.error
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigRecord":
        cfg = TrainConfig.from_dict({k: d[k] for k in CONFIG_FIELDS if k in d})
        return cls(
            config_id=d["config_id"],
            config=cfg,
            status=d["status"],
            param_count=d["param_count"],
            metafeatures={k[5:]: v for k, v in d.items() if k.startswith("meta.")},
            best_epoch=d.get("best_epoch"),
            n_epochs=d.get("n_epochs", 0),
            runtime=_num(d.get("runtime")),
            final={k[6:]: _num(v) for k, v in d.items() if k.startswith("final.")},
            retrain_train_nll=[_num(v) for v in d.get("retrain_train_nll", [])],
            error=d.get("error"),
        )

    @classmethod
    def from_result(cls, result: RunResult, ds: TimeSeriesDataset) -> "ConfigRecord":
        return cls(
            config_id=result.config_id,
            config=result.config,
            status=result.status,
            param_count=result.param_count,
            metafeatures=dataset_metafeatures(ds, result.horizon),
            best_epoch=result.best_epoch,
            n_epochs=len(result.epochs),
            runtime=result.runtime,
            final=result.final.to_dict() if result.final is not None else {},
            retrain_train_nll=list(result.retrain_train_nll),
            error=result.error,
        )


@dataclass
class EpochLogRecord:
    config_id: str
    epoch: int
    values: dict  # train_nll, val_nll, lr, runtime, val.*, test.*, grad.<layer>.<stat>

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {"config_id": self.config_id, "epoch": self.epoch, **self.values}

    @classmethod
    def from_dict(cls, d: dict) -> "EpochLogRecord":
        values = {k: _num(v) for k, v in d.items() if k not in ("config_id", "epoch")}
        return cls(d["config_id"], int(d["epoch"]), values)


def _num(v):
    return math.nan if v is None else v


def _epoch_records(result: RunResult) -> list[EpochLogRecord]:
    out = []
    for e in result.epochs:
        flat = e.flat()
        flat.pop("epoch")
        out.append(EpochLogRecord(result.config_id, e.epoch, flat))
    return out


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


# --------------------------------------------------------------------------
# reading


def _read_jsonl(path: Path, recover_tail: bool = True) -> list[tuple[int, dict]]:
    """Parse a JSONL file; a torn final line (no newline) is ignored."""
    if not path.exists():
        return []
    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    lines = data.split(b"\n")
    torn = lines[-1] if lines and lines[-1] else None
    for lineno, raw in enumerate(lines[:-1], start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            if not isinstance(obj, dict):
                raise ValueError("record is not an object")
        except ValueError as exc:
            raise CorruptLine(lineno, str(path), str(exc)) from None
        out.append((lineno, obj))
    if torn is not None and not recover_tail:
        raise CorruptLine(len(lines), str(path), "truncated final line")
    return out


class Metadataset:
    """In-memory index of a store, keyed by dataset then config id."""

    def __init__(self, manifest: dict | None = None):
        self.manifest = manifest or {"format": FORMAT, "schema_version": SCHEMA_VERSION, "datasets": {}}
        self.configs: dict[str, dict[str, ConfigRecord]] = {}
        self.epochs: dict[str, list[EpochLogRecord]] = {}

    @classmethod
    def load(cls, path) -> "Metadataset":
        path = Path(path)
        manifest = _read_manifest(path)
        meta = cls(manifest)
        for name in sorted(manifest.get("datasets", {})):
            committed = {}
            for lineno, obj in _read_jsonl(path / name / "configs.jsonl"):
                try:
                    rec = ConfigRecord.from_dict(obj)
                except (KeyError, TypeError, ValueError) as exc:
                    raise CorruptLine(lineno, str(path / name / "configs.jsonl"), str(exc)) from None
                committed[rec.config_id] = rec
            meta.configs[name] = committed
            for lineno, obj in _read_jsonl(path / name / "epochs.jsonl"):
                try:
                    rec = EpochLogRecord.from_dict(obj)
                except (KeyError, TypeError, ValueError) as exc:
                    raise CorruptLine(lineno, str(path / name / "epochs.jsonl"), str(exc)) from None
                if rec.config_id in committed:
                    meta.epochs.setdefault(rec.config_id, []).append(rec)
        for recs in meta.epochs.values():
            recs.sort(key=lambda r: r.epoch)
        return meta

    @property
    def datasets(self) -> list[str]:
        return sorted(self.configs)

    def records(self, dataset: str) -> list[ConfigRecord]:
        return [self.configs[dataset][k] for k in sorted(self.configs.get(dataset, {}))]

    def epochs_of(self, config_id: str) -> list[EpochLogRecord]:
        return self.epochs.get(config_id, [])

    def query(
        self, predicate: Callable[[TrainConfig], bool] = lambda c: True, dataset: str | None = None
    ) -> list[tuple[ConfigRecord, list[EpochLogRecord]]]:
        names = [dataset] if dataset is not None else self.datasets
        return [(r, self.epochs_of(r.config_id)) for n in names for r in self.records(n) if predicate(r.config)]

    def save(self, path) -> None:
        """Write this metadataset to a fresh store directory."""
        with MetaStore.open(path, create=True) as store:
            store.manifest = json.loads(json.dumps(self.manifest))
            store._write_manifest()
            for name in self.datasets:
                for rec in self.records(name):
                    store._append_records(name, rec, self.epochs_of(rec.config_id))

    def equals(self, other: "Metadataset") -> bool:
        if self.datasets != other.datasets:
            return False
        for name in self.datasets:
            a = [r.to_dict() for r in self.records(name)]
            b = [r.to_dict() for r in other.records(name)]
            if not _same(a, b):
                return False
            for r in self.records(name):
                ea = [e.to_dict() for e in self.epochs_of(r.config_id)]
                eb = [e.to_dict() for e in other.epochs_of(r.config_id)]
                if not _same(ea, eb):
                    return False
        return True

    def grid_check(self, dataset: str) -> tuple[set, set]:
        """``(missing, unexpected)`` config ids relative to the declared grid."""
        declared = self.manifest["datasets"].get(dataset, {}).get("grid_ids")
        have = set(self.configs.get(dataset, {}))
        if declared is None:
            return set(), set()
        declared = set(declared)
        return declared - have, have - declared

    def export_csv(self, dataset: str, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cfg_rows = [r.to_dict() for r in self.records(dataset)]
        for row in cfg_rows:
            row["retrain_train_nll"] = ";".join(jsonio.format_float(v) or "" for v in row["retrain_train_nll"])
        ep_rows = [e.to_dict() for r in self.records(dataset) for e in self.epochs_of(r.config_id)]
        p1 = directory / f"{dataset}_configs.csv"
        p2 = directory / f"{dataset}_epochs.csv"
        _write_csv(p1, cfg_rows)
        _write_csv(p2, ep_rows)
        return p1, p2


def _write_csv(path: Path, rows: list[dict]) -> None:
    header = []
    for row in rows:
        header.extend(k for k in row if k not in header)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_cell(v) for k, v in row.items()})


def _csv_cell(v):
    if isinstance(v, float):
        return jsonio.format_float(v) or ""
    return "" if v is None else v


def _read_manifest(path: Path) -> dict:
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise StorageFailure(f"{path} is not a metastore (no manifest.json)")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise SchemaMismatch(f"unreadable manifest: {exc}") from None
    if manifest.get("format") != FORMAT or manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"unsupported store format {manifest.get('format')!r} version {manifest.get('schema_version')!r}"
        )
    return manifest


def load(path) -> Metadataset:
    return Metadataset.load(path)


# --------------------------------------------------------------------------
# writing


class MetaStore:
    """Single writer for a store directory, guarded by a lock file."""

    def __init__(self, path, manifest: dict):
        self.path = Path(path)
        self.manifest = manifest
        self._ids: dict[str, set[str]] = {}
        self._lock_fd = None

    @classmethod
    def open(cls, path, create: bool = True, break_lock: bool = False) -> "MetaStore":
        path = Path(path)
        if not (path / "manifest.json").exists():
            if not create:
                raise StorageFailure(f"{path} is not a metastore")
            path.mkdir(parents=True, exist_ok=True)
            manifest = {
                "format": FORMAT,
                "schema_version": SCHEMA_VERSION,
                "metric_aggregation": dict(AGGREGATION),
                "datasets": {},
            }
            store = cls(path, manifest)
            store._acquire(break_lock)
            store._write_manifest()
        else:
            store = cls(path, _read_manifest(path))
            store._acquire(break_lock)
        try:
            store.recover()
        except Exception:
            store.close()
            raise
        return store

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _acquire(self, break_lock: bool) -> None:
        lock = self.path / ".lock"
        if break_lock and lock.exists():
            lock.unlink()
        try:
            self._lock_fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLocked(f"{self.path} is locked by another writer ({lock})") from None
        os.write(self._lock_fd, str(os.getpid()).encode())

    def close(self) -> None:
        if self._lock_fd is not None:
            os.close(self._lock_fd)
            self._lock_fd = None
            try:
                (self.path / ".lock").unlink()
            except FileNotFoundError:
                pass

    def _write_manifest(self) -> None:
        tmp = self.path / "manifest.json.tmp"
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.path / "manifest.json")

    def recover(self) -> dict:
        """Drop torn tails and orphan epoch records; returns what was removed."""
        removed = {}
        for name in list(self.manifest["datasets"]):
            d = self.path / name
            cfg_path, ep_path = d / "configs.jsonl", d / "epochs.jsonl"
            _truncate_torn_tail(cfg_path)
            ids = {obj["config_id"] for _, obj in _read_jsonl(cfg_path)}
            self._ids[name] = ids
            _truncate_torn_tail(ep_path)
            kept, dropped = [], 0
            if ep_path.exists():
                with open(ep_path, "rb") as fh:
                    for raw in fh.read().split(b"\n"):
                        if not raw.strip():
                            continue
                        try:
                            cid = json.loads(raw)["config_id"]
                        except (ValueError, KeyError):
                            cid = None
                        if cid in ids:
                            kept.append(raw)
                        else:
                            dropped += 1
            if dropped:
                tmp = ep_path.with_suffix(".jsonl.tmp")
                with open(tmp, "wb") as fh:
                    fh.write(b"".join(line + b"\n" for line in kept))
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, ep_path)
                removed[name] = dropped
        return removed

    def _ensure_dataset(self, name: str, metafeatures: dict | None = None) -> None:
        if name not in self.manifest["datasets"]:
            self.manifest["datasets"][name] = {"metafeatures": metafeatures or {}}
            self._write_manifest()
        (self.path / name).mkdir(parents=True, exist_ok=True)
        self._ids.setdefault(name, set())

    def declare_grid(self, dataset: str, grid: Iterable[TrainConfig], metafeatures: dict | None = None) -> None:
        grid = list(grid)
        self._ensure_dataset(dataset, metafeatures)
        axes = {}
        for cfg in grid:
            for k in GRID_AXES:
                axes.setdefault(k, set()).add(getattr(cfg, k))
        entry = self.manifest["datasets"][dataset]
        entry["grid"] = {k: sorted(v) for k, v in axes.items()}
        entry["grid_size"] = len(grid)
        entry["grid_ids"] = sorted(c.config_id for c in grid)
        if metafeatures:
            entry["metafeatures"] = metafeatures
        self._write_manifest()

    def has(self, config_id: str, dataset: str | None = None) -> bool:
        if dataset is not None:
            return config_id in self._ids.get(dataset, set())
        return any(config_id in ids for ids in self._ids.values())

    def append_run(self, result: RunResult, ds: TimeSeriesDataset) -> str:
        rec = ConfigRecord.from_result(result, ds)
        name = result.config.dataset
        self._ensure_dataset(name, dataset_metafeatures(ds, result.horizon))
        if rec.config_id in self._ids[name]:
            raise DuplicateConfig(f"config {rec.config_id} already stored for {name}")
        self._append_records(name, rec, _epoch_records(result))
        return rec.config_id

    def _append_records(self, name: str, rec: ConfigRecord, epochs: list[EpochLogRecord]) -> None:
        self._ensure_dataset(name)
        if rec.config_id in self._ids[name]:
            raise DuplicateConfig(f"config {rec.config_id} already stored for {name}")
        d = self.path / name
        try:
            if epochs:
                payload = "".join(jsonio.dumps(e.to_dict()) + "\n" for e in epochs)
                _append_synced(d / "epochs.jsonl", payload)
            _append_synced(d / "configs.jsonl", jsonio.dumps(rec.to_dict()) + "\n")
        except OSError as exc:
            raise StorageFailure(f"append to {d} failed: {exc}") from exc
        self._ids[name].add(rec.config_id)


def _append_synced(path: Path, payload: str) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())


def _truncate_torn_tail(path: Path) -> None:
    if not path.exists():
        return
    with open(path, "rb+") as fh:
        data = fh.read()
        if data and not data.endswith(b"\n"):
            fh.truncate(data.rfind(b"\n") + 1)


# --------------------------------------------------------------------------
# tabular benchmark view


def _objective_getter(objective: str, guard: bool):
    if objective in ("val_nll", "val.nll"):
        return lambda e: e.values["val_nll"]
    if objective == "train_nll":
        return lambda e: e.values["train_nll"]
    side, _, metric = objective.partition(".")
    if side == "test" and metric in METRIC_KEYS:
        if guard:
            raise UnknownMetric(f"{objective!r} is reserved for final scoring and cannot drive the search")
        return lambda e: e.values[objective]
    if side == "val" and metric in METRIC_KEYS:
        return lambda e: e.values[objective]
    raise UnknownMetric(f"unknown objective {objective!r}")


def to_tabular_benchmark(
    meta: Metadataset,
    dataset: str,
    objective: str = "val.nll",
    fidelity: int | None = None,
    final_metric: str = "mase",
    guard: bool = True,
    predicate: Callable[[TrainConfig], bool] | None = None,
) -> TabularBenchmark:
    """Build a lookup table from stored runs.

    ``fidelity`` (0-based epoch) caps the curves; runs that stopped earlier are
    censored beyond their last epoch. ``final_metric`` is read from the
    selected model's test report.
    """
    getter = _objective_getter(objective, guard)
    if final_metric not in METRIC_KEYS:
        raise UnknownMetric(f"unknown final metric {final_metric!r}")
    recs = [r for r in meta.records(dataset) if predicate is None or predicate(r.config)]
    if not recs:
        raise EmptySelection(f"no stored runs for dataset {dataset!r}")
    R = max(r.config.epochs for r in recs) if fidelity is None else int(fidelity) + 1
    curves = np.full((len(recs), R), np.nan)
    for i, r in enumerate(recs):
        for e in meta.epochs_of(r.config_id):
            if e.epoch < R:
                v = getter(e)
                curves[i, e.epoch] = v if v is not None else np.nan
    finals = [r.final.get(final_metric, math.nan) for r in recs]
    descriptors = [{k: getattr(r.config, k) for k in GRID_AXES} for r in recs]
    return TabularBenchmark([r.config_id for r in recs], descriptors, curves, finals, name=dataset, objective=objective)
