"""``tsbench`` command line.

Every failure ends with a single ``error: <Kind>: <message>`` line on stderr
and a nonzero exit status (1 for runtime failures, 2 for usage errors,
130 on interrupt).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import importance as imp
from . import jsonio
from .errors import EmptySelection, TsbenchError, UnknownMetric
from .hpo.suite import METHODS, compare_methods, run_method
from .metastore import MetaStore, Metadataset, dataset_metafeatures, to_tabular_benchmark
from .metrics import METRIC_KEYS
from .trainer import GRID_AXES, TrainConfig, full_grid, run_config, sweep_grid
from .tsf import read_tsf

log = logging.getLogger("tsbench")

STORE_ENV = "TSBENCH_STORE"
RUN_FIELDS = ("epochs", "batches_per_epoch", "batch_size", "samples", "retrain_seed", "is_fraction", "mase_mode")


class UsageError(TsbenchError):
    pass


# --------------------------------------------------------------------------
# manifests


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(m, dict) or "dataset" not in m:
        raise UsageError(f"{path}: manifest needs a 'dataset' path")
    ds_path = Path(m["dataset"])
    if not ds_path.is_absolute():
        m["dataset"] = str((path.parent / ds_path).resolve())
    if m.get("store") and not Path(m["store"]).is_absolute():
        m["store"] = str((path.parent / m["store"]).resolve())
    return m


def _dataset(m: dict):
    return read_tsf(m["dataset"], name=m.get("name"), horizon=m.get("horizon"), seasonality=m.get("seasonality"))


def manifest_configs(m: dict, dataset: str, allow_offgrid: bool = False) -> list[TrainConfig]:
    """Expand a manifest into configs: explicit ``configs`` or a (partial) ``grid``."""
    run = {k: m[k] for k in RUN_FIELDS if k in m}
    if m.get("horizon") is not None:
        run["horizon"] = int(m["horizon"])
    if "configs" in m:
        configs = [TrainConfig.from_dict({**run, **c, "dataset": dataset}) for c in m["configs"]]
    else:
        axes = m.get("grid", {})
        unknown = set(axes) - set(GRID_AXES)
        if unknown:
            raise UsageError(f"unknown grid axes: {sorted(unknown)}")
        configs = full_grid(dataset, **{k: tuple(v) for k, v in axes.items()}, **run)
    if m.get("subsample"):
        rng = np.random.default_rng(int(m.get("sampling_seed", 0)))
        k = min(int(m["subsample"]), len(configs))
        configs = [configs[i] for i in sorted(rng.choice(len(configs), size=k, replace=False))]
    allow_offgrid = allow_offgrid or bool(m.get("allow_offgrid"))
    if not allow_offgrid:
        for c in configs:
            bad = c.off_grid()
            if bad:
                raise UsageError(f"config {c.config_id} is off the published grid in {bad}; pass --allow-offgrid")
    return configs


def _store_path(arg: str | None, m: dict | None = None) -> Path:
    path = arg or (m or {}).get("store") or os.environ.get(STORE_ENV)
    if not path:
        raise UsageError(f"no store given; pass --store or set {STORE_ENV}")
    return Path(path)


def _keep_manifest(store: Path, m: dict, kind: str) -> Path:
    text = json.dumps(m, indent=2, sort_keys=True)
    digest = hashlib.sha256(text.encode()).hexdigest()[:12]
    d = store / "_manifests"
    d.mkdir(parents=True, exist_ok=True)
    out = d / f"{kind}-{digest}.json"
    out.write_text(text + "\n", encoding="utf-8")
    return out


# --------------------------------------------------------------------------
# output helpers


def write_rows(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = []
    for r in rows:
        header.extend(k for k in r if k not in header)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
    return path


def _cell(v):
    if isinstance(v, float):
        return jsonio.format_float(v) or ""
    return "" if v is None else v


def _emit_rows(rows: list[dict], out) -> None:
    if out:
        write_rows(out, rows)
        print(f"wrote={out}")
        return
    header = []
    for r in rows:
        header.extend(k for k in r if k not in header)
    w = csv.DictWriter(sys.stdout, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})


def _load_meta(store) -> Metadataset:
    path = Path(store)
    if not (path / "manifest.json").exists():
        raise UsageError(f"{path} is not a metastore")
    return Metadataset.load(path)


def _pick_dataset(meta: Metadataset, name: str | None) -> str:
    if name:
        if name not in meta.datasets:
            raise EmptySelection(f"dataset {name!r} not in store (have {meta.datasets})")
        return name
    if len(meta.datasets) != 1:
        raise UsageError(f"store holds {len(meta.datasets)} datasets; pass --dataset")
    return meta.datasets[0]


# --------------------------------------------------------------------------
# subcommands


def cmd_inspect(args) -> int:
    ds = read_tsf(args.tsf, horizon=args.horizon, seasonality=args.seasonality)
    for k, v in ds.stats().items():
        print(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
    return 0


def cmd_train(args) -> int:
    m = load_manifest(args.manifest)
    ds = _dataset(m)
    configs = manifest_configs(m, ds.name, args.allow_offgrid)
    if len(configs) != 1:
        raise UsageError(f"train expects exactly one config, manifest expands to {len(configs)}")
    cfg = configs[0]
    result = run_config(ds, cfg)
    store_arg = args.store or m.get("store") or os.environ.get(STORE_ENV)
    if store_arg:
        with MetaStore.open(store_arg) as store:
            _keep_manifest(Path(store_arg), m, "train")
            if not store.has(cfg.config_id, ds.name):
                store.append_run(result, ds)
    summary = {
        "config_id": cfg.config_id,
        "status": result.status,
        "best_epoch": result.best_epoch,
        "param_count": result.param_count,
        **({f"test.{k}": v for k, v in result.final.to_dict().items()} if result.final else {}),
    }
    print(jsonio.dumps(summary))
    return 0 if result.status == "complete" else 1


def cmd_sweep(args) -> int:
    m = load_manifest(args.manifest)
    ds = _dataset(m)
    configs = manifest_configs(m, ds.name, args.allow_offgrid)
    store_path = _store_path(args.store, m)
    parallelism = args.parallelism or int(m.get("parallelism", 1))
    done = {"n": 0}

    def progress(res):
        done["n"] += 1
        log.info("[%d] %s %s", done["n"], res.config_id, res.status)

    with MetaStore.open(store_path, break_lock=args.break_lock) as store:
        _keep_manifest(store_path, m, "sweep")
        store.declare_grid(ds.name, configs, dataset_metafeatures(ds, configs[0].horizon))
        before = sum(store.has(c.config_id, ds.name) for c in configs)
        results = sweep_grid(ds, configs, parallelism, store=store, on_result=progress)
    meta = Metadataset.load(store_path)
    recs = {r.config_id: r for r in meta.records(ds.name)}
    rows = [_summary_row(recs[c.config_id]) for c in configs if c.config_id in recs]
    out = write_rows(store_path / f"{ds.name}_summary.csv", rows)
    failed = sum(r.status != "complete" for r in results)
    print(f"dataset={ds.name}")
    print(f"configs={len(configs)}")
    print(f"skipped={before}")
    print(f"ran={len(results)}")
    print(f"failed={failed}")
    print(f"summary={out}")
    return 0


def _summary_row(rec) -> dict:
    row = {"config_id": rec.config_id}
    row.update({k: getattr(rec.config, k) for k in GRID_AXES})
    row.update({"status": rec.status, "best_epoch": rec.best_epoch, "param_count": rec.param_count})
    row.update({f"test.{k}": v for k, v in rec.final.items() if k in ("mase", "mae", "rmse", "crps", "nll")})
    return row


def cmd_evaluate(args) -> int:
    meta = _load_meta(_store_path(args.store))
    name = _pick_dataset(meta, args.dataset)
    if args.metric not in METRIC_KEYS:
        raise UnknownMetric(f"unknown metric {args.metric!r}")
    rows = []
    for rec in meta.records(name):
        row = {"config_id": rec.config_id}
        row.update({k: getattr(rec.config, k) for k in GRID_AXES})
        row["status"] = rec.status
        row["best_epoch"] = rec.best_epoch
        row[f"test.{args.metric}"] = rec.final.get(args.metric, math.nan)
        rows.append(row)
    if not rows:
        raise EmptySelection(f"no runs stored for {name!r}")
    if args.by:
        if args.by not in GRID_AXES:
            raise UsageError(f"--by must be one of {list(GRID_AXES)}")
        rows = _group_rows(rows, args.by, f"test.{args.metric}")
    _emit_rows(rows, args.out)
    return 0


def _group_rows(rows: list[dict], by: str, value: str) -> list[dict]:
    groups = defaultdict(list)
    for r in rows:
        if isinstance(r[value], float) and math.isfinite(r[value]):
            groups[r[by]].append(r[value])
    return [
        {by: k, "n": len(v), "mean": float(np.mean(v)), "median": float(np.median(v)), "min": float(np.min(v))}
        for k, v in sorted(groups.items(), key=lambda kv: imp._level_key(kv[0]))
    ]


def cmd_hpo(args) -> int:
    store = _store_path(args.store)
    meta = _load_meta(store)
    name = _pick_dataset(meta, args.dataset)
    bench = to_tabular_benchmark(meta, name, objective=args.objective, final_metric=args.final_metric)
    trace = run_method(args.method, bench, args.trials, args.seed)
    out = Path(args.out) if args.out else store / "_hpo" / f"{name}-{args.method}-t{args.trials}-s{args.seed}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trace.to_jsonl(), encoding="utf-8")
    for k, v in trace.summary().items():
        print(f"{k}={jsonio.format_float(v) if isinstance(v, float) else v}")
    print(f"trace={out}")
    return 0


def cmd_importance(args) -> int:
    store = _store_path(args.store)
    meta = _load_meta(store)
    name = _pick_dataset(meta, args.dataset)
    table = imp.prepare_grid(meta, name, args.objective, include_seed=args.include_seed)
    report = imp.grid_fanova(table, order=args.order)
    out = Path(args.out) if args.out else store / "_reports"
    paths = _write_importance(report, out, name, args.objective, figures=not args.no_figures)
    for row in report.bar_rows():
        print(f"{row['factor']}={jsonio.format_float(row['importance'])}")
    if report.degenerate:
        print("degenerate=true")
    for p in paths:
        print(f"wrote={p}")
    return 0


def _write_importance(report, out: Path, name: str, objective: str, figures: bool) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{name}_importance_{objective.replace('.', '_')}"
    (out / f"{stem}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    paths = [out / f"{stem}.json", report.write_csv(out / f"{stem}.csv")]
    if figures:
        from . import plotting

        paths.append(plotting.importance_bars(report.bar_rows(), out / f"{stem}.png", title=f"{name} ({objective})"))
    return paths


def cmd_report(args) -> int:
    store = _store_path(args.store)
    meta = _load_meta(store)
    out = Path(args.out) if args.out else store / "_reports"
    out.mkdir(parents=True, exist_ok=True)
    figures = not args.no_figures
    if figures:
        from . import plotting
    written: list[Path] = []
    for name in meta.datasets:
        recs = meta.records(name)
        if not recs:
            continue
        written.extend(meta.export_csv(name, out))
        written.append(write_rows(out / f"{name}_summary.csv", [_summary_row(r) for r in recs]))

        curve_rows = _curve_rows(meta, recs)
        written.append(write_rows(out / f"{name}_curves.csv", curve_rows))
        scatter = [{**{k: getattr(r.config, k) for k in GRID_AXES}, "test.mase": r.final.get("mase", math.nan)} for r in recs]
        written.append(write_rows(out / f"{name}_context_scatter.csv", scatter))
        if figures:
            written.append(plotting.learning_curves(curve_rows, out / f"{name}_curves.png"))
            written.append(plotting.context_scatter(scatter, out / f"{name}_context_scatter.png"))
        try:
            table = imp.prepare_grid(meta, name, args.objective)
            report = imp.grid_fanova(table, order=2)
            written.extend(_write_importance(report, out, name, args.objective, figures))
        except (TsbenchError, ValueError) as exc:
            log.warning("importance skipped for %s: %s", name, exc)
            print(f"importance_skipped={name}: {type(exc).__name__}")

    if len(meta.datasets) >= 2 and args.hpo_seeds > 0:
        benches = [to_tabular_benchmark(meta, n) for n in meta.datasets if meta.records(n)]
        results, cd = compare_methods(benches, trials=args.trials, seeds=range(args.hpo_seeds))
        (out / "hpo_cd.json").write_text(cd.to_json() + "\n", encoding="utf-8")
        written.append(out / "hpo_cd.json")
        written.append(write_rows(out / "hpo_cd.csv", cd.plot_rows()))
        written.append(write_rows(out / "hpo_results.csv", [{"task": t, **row} for t, row in sorted(results.items())]))
        if figures:
            written.append(plotting.cd_diagram(cd.plot_rows(), out / "hpo_cd.png", cd.groups))
    for p in written:
        print(f"wrote={p}")
    return 0


def _curve_rows(meta: Metadataset, recs) -> list[dict]:
    """Mean validation NLL per (strategy, shape, epoch)."""
    acc = defaultdict(list)
    for r in recs:
        for e in meta.epochs_of(r.config_id):
            v = e.values.get("val_nll")
            if v is not None and math.isfinite(v):
                acc[(r.config.strategy, r.config.shape, e.epoch)].append(v)
    return [
        {"strategy": s, "shape": sh, "epoch": ep, "val_nll": float(np.mean(v)), "n": len(v)}
        for (s, sh, ep), v in sorted(acc.items())
    ]


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: UsageError: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tsbench", description="Probabilistic MLP forecasting benchmark and metadataset tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("inspect", help="print header and length statistics of a .tsf file")
    s.add_argument("tsf")
    s.add_argument("--horizon", type=int)
    s.add_argument("--seasonality", type=int)
    s.set_defaults(func=cmd_inspect)

    for name, fn, hlp in (
        ("train", cmd_train, "train the single config described by a manifest"),
        ("sweep", cmd_sweep, "run (or resume) every config of a manifest into a store"),
    ):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("manifest")
        s.add_argument("--store", help=f"store directory (default: manifest 'store' or ${STORE_ENV})")
        s.add_argument("--allow-offgrid", action="store_true")
        if name == "sweep":
            s.add_argument("--parallelism", type=int)
            s.add_argument("--break-lock", action="store_true", help="remove a stale lock left by a dead writer")
        s.set_defaults(func=fn)

    s = sub.add_parser("evaluate", help="final test metric per stored config")
    s.add_argument("store", nargs="?")
    s.add_argument("--dataset")
    s.add_argument("--metric", default="mase")
    s.add_argument("--by", help="aggregate over a grid axis")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("hpo", help="replay an HPO method on the stored tabular benchmark")
    s.add_argument("store", nargs="?")
    s.add_argument("--method", choices=sorted(METHODS), required=True)
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dataset")
    s.add_argument("--objective", default="val.nll")
    s.add_argument("--final-metric", default="mase")
    s.add_argument("--out")
    s.set_defaults(func=cmd_hpo)

    s = sub.add_parser("importance", help="exact grid fANOVA of a stored sweep")
    s.add_argument("store", nargs="?")
    s.add_argument("--dataset")
    s.add_argument("--objective", default=imp.DEFAULT_OBJECTIVE)
    s.add_argument("--order", type=int, choices=(1, 2), default=2)
    s.add_argument("--include-seed", action="store_true")
    s.add_argument("--out")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_importance)

    s = sub.add_parser("report", help="summary CSVs, plot data and figures for a store")
    s.add_argument("store", nargs="?")
    s.add_argument("--out")
    s.add_argument("--objective", default=imp.DEFAULT_OBJECTIVE)
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--hpo-seeds", type=int, default=5)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("error: Interrupted: stopped by user; the store is resumable", file=sys.stderr)
        return 130
    except (TsbenchError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
