"""Train one grid cell end-to-end and run whole grid sweeps."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable

import numpy as np

from . import model as M
from .errors import EmptyRegion, MissingValues, NonFiniteLoss
from .metrics import MetricReport, aggregate_reports, window_report
from .tsf import (
    TimeSeriesDataset,
    Window,
    WindowSampler,
    holdout_windows,
    make_eval_windows,
    split_dataset,
    with_holdout,
)

log = logging.getLogger(__name__)

CONTEXTS = (2, 7, 24, 100, 300)
STRATEGIES = ("OOS", "ReOOS")  # the swept grid; "IS" is supported but not part of it
ALL_STRATEGIES = ("OOS", "ReOOS", "IS")
LEARNING_RATES = (0.01, 0.001, 0.0001)
WEIGHT_DECAYS = (0.0, 0.1, 0.5)
SEEDS = (100, 101, 102)
GRID_AXES = {
    "context": CONTEXTS,
    "strategy": STRATEGIES,
    "shape": tuple(M.SHAPES),
    "dist_hidden": M.DIST_HIDDEN,
    "lr": LEARNING_RATES,
    "weight_decay": WEIGHT_DECAYS,
    "seed": SEEDS,
}
GRAD_QUANTILES = tuple(round(k / 10, 1) for k in range(1, 10))


@dataclass(frozen=True)
class TrainConfig:
    dataset: str
    context: int = 24
    strategy: str = "OOS"
    shape: str = "Base"
    dist_hidden: int = 1
    lr: float = 0.001
    weight_decay: float = 0.0
    seed: int = 100
    epochs: int = 50
    batches_per_epoch: int = 50
    batch_size: int = 64
    samples: int = 100
    horizon: int | None = None
    retrain_seed: int | None = None
    is_fraction: float = 0.1
    mase_mode: str = "monash"

    def __post_init__(self):
        if self.strategy not in ALL_STRATEGIES:
            raise ValueError(f"unknown validation strategy {self.strategy!r}")
        if self.shape not in M.SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.context, self.epochs, self.batches_per_epoch, self.batch_size, self.samples) < 1:
            raise ValueError("context, epochs, batches, batch size and samples must be positive")

    def canonical(self) -> str:
        d = asdict(self)
        for k in ("lr", "weight_decay", "is_fraction"):
            d[k] = float(d[k])
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def config_id(self) -> str:
        """64-bit stable hash of the canonical serialisation, as 16 hex digits."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def off_grid(self) -> list[str]:
        bad = [k for k, levels in GRID_AXES.items() if getattr(self, k) not in levels]
        if (self.epochs, self.batches_per_epoch, self.batch_size) != (50, 50, 64):
            bad.append("budget")
        return bad

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**d)


def full_grid(dataset: str, **overrides) -> list[TrainConfig]:
    """The swept Cartesian grid for one dataset (4,860 cells by default)."""
    axes = {k: overrides.pop(k, v) for k, v in GRID_AXES.items()}
    keys = list(axes)
    return [TrainConfig(dataset=dataset, **dict(zip(keys, combo)), **overrides) for combo in itertools.product(*axes.values())]


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: float
    val: MetricReport
    test: MetricReport
    grad_stats: dict
    lr: float
    runtime: float

    def flat(self) -> dict:
        out = {
            "epoch": self.epoch,
            "train_nll": self.train_nll,
            "val_nll": self.val_nll,
            "lr": self.lr,
            "runtime": self.runtime,
        }
        out.update({f"val.{k}": v for k, v in self.val.to_dict().items()})
        out.update({f"test.{k}": v for k, v in self.test.to_dict().items()})
        for layer, stats in self.grad_stats.items():
            out.update({f"grad.{layer}.{s}": v for s, v in stats.items()})
        return out


@dataclass
class RunResult:
    config: TrainConfig
    epochs: list[EpochRecord]
    best_epoch: int | None
    final: MetricReport | None
    runtime: float
    param_count: int
    horizon: int
    status: str = "complete"
    error: str | None = None
    retrain_train_nll: list[float] = field(default_factory=list)

    @property
    def config_id(self) -> str:
        return self.config.config_id

    def fingerprint(self) -> dict:
        """Everything except wall-clock timings; equal across identical reruns."""
        return {
            "config": self.config.canonical(),
            "epochs": [{k: v for k, v in e.flat().items() if k != "runtime"} for e in self.epochs],
            "best_epoch": self.best_epoch,
            "final": self.final.to_dict() if self.final else None,
            "param_count": self.param_count,
            "status": self.status,
            "retrain": list(self.retrain_train_nll),
        }


def gradient_stats(pooled: np.ndarray) -> dict:
    a = np.abs(pooled)
    qs = np.quantile(a, (0.5,) + GRAD_QUANTILES)
    stats = {"max": float(a.max()), "mean": float(a.mean()), "median": float(qs[0]), "std": float(a.std())}
    stats.update({f"q{q:.1f}": float(v) for q, v in zip(GRAD_QUANTILES, qs[1:])})
    return stats


def evaluate_checkpoint(
    params: M.MlpParameters,
    windows: list[Window],
    n: int,
    seed,
    seasonality: int = 1,
    mase_mode: str = "monash",
) -> MetricReport:
    """Sample ``n`` forecasts per window and score them; point forecast is the sample median."""
    if not windows:
        raise ValueError("no windows to evaluate")
    X = np.stack([w.x for w in windows])
    Y = np.stack([w.y for w in windows])
    dist, cache = M.forward(params, X)
    nll = M.student_t_nll_terms(cache.dist, Y)
    samples = M.sample_forecast(cache.dist, n, np.random.default_rng(seed))
    reports = [
        window_report(Y[k], samples[k], w.history, seasonality, nll_terms=nll[k], mase_mode=mase_mode)
        for k, w in enumerate(windows)
    ]
    return aggregate_reports(reports)


BatchHook = Callable[[str, np.ndarray, np.ndarray], None]


def _train_epochs(
    params,
    sampler: WindowSampler,
    cfg: TrainConfig,
    rng,
    n_epochs: int,
    phase: str,
    on_batch: BatchHook | None,
    on_epoch: Callable | None = None,
):
    """Run ``n_epochs`` epochs; ``on_epoch(epoch, train_nll, grad_stats, seconds)``
    may return ``False`` to stop early."""
    state = M.AdamState.zeros_like(params)
    for epoch in range(n_epochs):
        t0 = time.perf_counter()
        losses = []
        pooled = {name: [] for name in params.layer_groups()}
        for _ in range(cfg.batches_per_epoch):
            X, Y, sidx, starts = sampler.sample(cfg.batch_size, rng)
            if on_batch is not None:
                on_batch(phase, sidx, starts)
            loss, grads = M.loss_and_grad(params, X, Y)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"{phase} loss became non-finite in epoch {epoch}")
            for name, tensors in grads.layer_groups().items():
                pooled[name].extend(t.ravel() for t in tensors)
            M.adam_step(params, grads, state, cfg.lr, cfg.weight_decay)
            losses.append(loss)
        stats = {name: gradient_stats(np.concatenate(chunks)) for name, chunks in pooled.items()}
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)), stats, time.perf_counter() - t0)
    return params


def run_config(
    ds: TimeSeriesDataset,
    cfg: TrainConfig,
    on_batch: BatchHook | None = None,
) -> RunResult:
    """Train ``cfg`` on ``ds`` under its validation strategy.

    ``on_batch(phase, series_index, target_start)`` sees every gradient
    step's windows; phase is ``"search"`` or ``"retrain"``.
    """
    if ds.contains_missing:
        raise MissingValues(f"dataset {ds.name!r} contains missing values")
    t_start = time.perf_counter()
    splits = split_dataset(ds, cfg.horizon)
    delta = splits.horizon
    arch = M.ArchitectureSpec(cfg.shape, cfg.context, delta, cfg.dist_hidden)
    m = ds.seasonality

    if cfg.strategy == "IS":
        splits = with_holdout(splits, cfg.is_fraction, cfg.seed)
        region = "in_sample"
        val_windows = holdout_windows(splits, cfg.context)
    else:
        region = "train"
        val_windows = make_eval_windows(splits, cfg.context, "validation")
    if not val_windows:
        raise EmptyRegion("no series is long enough for a validation window")
    test_windows = make_eval_windows(splits, cfg.context, "test")

    params = M.build(arch, cfg.seed)
    sampler = WindowSampler(splits, region, cfg.context)
    records: list[EpochRecord] = []
    best = {"epoch": None, "val": math.inf, "test": None}

    def after_epoch(epoch, train_nll, stats, seconds):
        t0 = time.perf_counter()
        val = evaluate_checkpoint(params, val_windows, cfg.samples, [cfg.seed, 2, epoch], m, cfg.mase_mode)
        test = evaluate_checkpoint(params, test_windows, cfg.samples, [cfg.seed, 4, epoch], m, cfg.mase_mode)
        if not math.isfinite(val.nll):
            raise NonFiniteLoss(f"validation loss became non-finite in epoch {epoch}")
        records.append(
            EpochRecord(epoch, train_nll, val.nll, val, test, stats, cfg.lr, seconds + time.perf_counter() - t0)
        )
        if val.nll < best["val"]:
            best.update(epoch=epoch, val=val.nll, test=test)

    result = RunResult(cfg, records, None, None, 0.0, M.param_count(arch), delta)
    try:
        _train_epochs(params, sampler, cfg, np.random.default_rng([cfg.seed, 1]), cfg.epochs, "search", on_batch, after_epoch)
        result.best_epoch = best["epoch"]
        if cfg.strategy == "ReOOS":
            seed = cfg.seed if cfg.retrain_seed is None else cfg.retrain_seed
            fresh = M.build(arch, seed)
            full = WindowSampler(splits, "train_plus_val", cfg.context)
            retrain_nll = result.retrain_train_nll
            _train_epochs(
                fresh, full, cfg, np.random.default_rng([seed, 3]), best["epoch"] + 1, "retrain", on_batch,
                lambda e, nll, stats, s: retrain_nll.append(nll),
            )
            result.final = evaluate_checkpoint(fresh, test_windows, cfg.samples, [cfg.seed, 5], m, cfg.mase_mode)
        else:
            result.final = best["test"]
    except NonFiniteLoss as exc:
        log.warning("run %s failed: %s", cfg.config_id, exc)
        result.status = "failed"
        result.error = str(exc)
        result.best_epoch = best["epoch"]
    result.runtime = time.perf_counter() - t_start
    return result


# --------------------------------------------------------------------------
# sweeps

_WORKER_DS: TimeSeriesDataset | None = None


def _init_worker(ds):
    global _WORKER_DS
    _WORKER_DS = ds


def _safe_run(ds, cfg) -> RunResult:
    try:
        return run_config(ds, cfg)
    except Exception as exc:  # a broken cell must not stop the sweep
        log.warning("config %s raised %s: %s", cfg.config_id, type(exc).__name__, exc)
        return RunResult(cfg, [], None, None, 0.0, 0, cfg.horizon or ds.horizon, "failed", f"{type(exc).__name__}: {exc}")


def _worker_run(cfg):
    return _safe_run(_WORKER_DS, cfg)


def sweep_grid(
    ds: TimeSeriesDataset,
    grid: Iterable[TrainConfig],
    parallelism: int = 1,
    store=None,
    on_result: Callable[[RunResult], None] | None = None,
) -> list[RunResult]:
    """Run every config once. With a ``store``, configs already present are
    skipped and each result is appended as soon as it finishes."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    seen = set()
    todo = []
    for cfg in grid:
        cid = cfg.config_id
        if cid in seen or (store is not None and store.has(cid)):
            continue
        seen.add(cid)
        todo.append(cfg)

    results = []

    def collect(res: RunResult):
        if store is not None:
            store.append_run(res, ds)
        if on_result is not None:
            on_result(res)
        results.append(res)

    if parallelism <= 1 or len(todo) <= 1:
        for cfg in todo:
            collect(_safe_run(ds, cfg))
    else:
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker, initargs=(ds,)) as pool:
            futures = [pool.submit(_worker_run, cfg) for cfg in todo]
            try:
                for fut in as_completed(futures):
                    collect(fut.result())
            except KeyboardInterrupt:
                for fut in futures:
                    fut.cancel()
                raise
    return sorted(results, key=lambda r: r.config_id)


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
