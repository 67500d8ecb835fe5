import json
import math

import numpy as np
import pytest

from conftest import linear_dataset
from tsbench import jsonio
from tsbench import metastore as ms
from tsbench.errors import (
    CorruptLine,
    DuplicateConfig,
    EmptySelection,
    SchemaMismatch,
    StorageFailure,
    StoreLocked,
    UnknownMetric,
)
from tsbench.hpo.benchmark import CENSORED
from tsbench.trainer import TrainConfig, run_config, sweep_grid

FAST = dict(epochs=3, batches_per_epoch=4, batch_size=16, samples=20)


def _grid(n=3):
    lrs = (0.01, 0.001, 0.0001)[:n]
    return [TrainConfig(dataset="line", context=7, lr=lr, **FAST) for lr in lrs]


@pytest.fixture(scope="module")
def ds():
    return linear_dataset(n_series=3, length=50)


@pytest.fixture(scope="module")
def results(ds):
    return sweep_grid(ds, _grid())


def _fill(path, ds, results):
    with ms.MetaStore.open(path) as store:
        store.declare_grid("line", _grid())
        for r in results:
            store.append_run(r, ds)


def test_append_cardinality(tmp_path, ds, results):
    _fill(tmp_path, ds, results)
    meta = ms.load(tmp_path)
    assert len(meta.records("line")) == 3
    for r in results:
        assert len(meta.epochs_of(r.config_id)) == len(r.epochs) == 3
    lines = (tmp_path / "line" / "epochs.jsonl").read_text().splitlines()
    assert len(lines) == 9
    assert not (tmp_path / ".lock").exists()


def test_duplicate_rejected(tmp_path, ds, results):
    with ms.MetaStore.open(tmp_path) as store:
        store.append_run(results[0], ds)
        with pytest.raises(DuplicateConfig):
            store.append_run(results[0], ds)
    with ms.MetaStore.open(tmp_path) as store:
        with pytest.raises(DuplicateConfig):
            store.append_run(results[0], ds)


def test_round_trip_exact(tmp_path, ds, results):
    _fill(tmp_path / "a", ds, results)
    a = ms.load(tmp_path / "a")
    a.save(tmp_path / "b")
    b = ms.load(tmp_path / "b")
    assert a.equals(b)
    for r in results:
        rec = b.configs["line"][r.config_id]
        assert rec.config == r.config
        assert rec.final == r.final.to_dict()
        assert [e["val_nll"] for e in b.epochs_of(r.config_id)] == [e.val_nll for e in r.epochs]
    assert (tmp_path / "a" / "line" / "configs.jsonl").read_bytes() == (tmp_path / "b" / "line" / "configs.jsonl").read_bytes()


def test_floats_written_with_17_digits():
    assert jsonio.dumps({"x": 0.1}) == '{"x":0.10000000000000001}'
    assert jsonio.dumps([1.0, math.nan, math.inf, 3]) == "[1.0,null,null,3]"
    for v in np.random.default_rng(0).normal(size=200) * 10.0 ** np.arange(-100, 100):
        assert json.loads(jsonio.dumps(v)) == v


def test_corrupt_line_reports_number(tmp_path, ds, results):
    _fill(tmp_path, ds, results)
    p = tmp_path / "line" / "configs.jsonl"
    lines = p.read_text().splitlines()
    lines[1] = lines[1][:20]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptLine) as info:
        ms.load(tmp_path)
    assert info.value.line == 2


def test_torn_tail_and_orphans_recovered(tmp_path, ds, results):
    _fill(tmp_path, ds, results[:2])
    # simulate a crash mid-run: epochs of a third run written, no config line, torn tail
    ep = tmp_path / "line" / "epochs.jsonl"
    orphan = ms._epoch_records(results[2])
    with open(ep, "a") as fh:
        for e in orphan:
            fh.write(jsonio.dumps(e.to_dict()) + "\n")
        fh.write('{"config_id": "abc", "ep')
    meta = ms.load(tmp_path)
    assert len(meta.records("line")) == 2
    with ms.MetaStore.open(tmp_path) as store:
        assert not store.has(results[2].config_id)
        store.append_run(results[2], ds)
    meta = ms.load(tmp_path)
    assert len(meta.records("line")) == 3
    assert len(meta.epochs_of(results[2].config_id)) == 3
    assert len(ep.read_text().splitlines()) == 9


def test_lock(tmp_path):
    store = ms.MetaStore.open(tmp_path)
    with pytest.raises(StoreLocked):
        ms.MetaStore.open(tmp_path)
    store.close()
    ms.MetaStore.open(tmp_path).close()
    (tmp_path / ".lock").write_text("999999")
    ms.MetaStore.open(tmp_path, break_lock=True).close()


def test_schema_and_missing_store(tmp_path):
    with pytest.raises(StorageFailure):
        ms.load(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other", "schema_version": 1}))
    with pytest.raises(SchemaMismatch):
        ms.load(tmp_path)


def test_query_and_grid_check(tmp_path, ds, results):
    with ms.MetaStore.open(tmp_path) as store:
        store.declare_grid("line", _grid())
        store.append_run(results[0], ds)
    meta = ms.load(tmp_path)
    missing, unexpected = meta.grid_check("line")
    assert len(missing) == 2 and not unexpected
    got = meta.query(lambda c: c.lr == results[0].config.lr)
    assert len(got) == 1 and len(got[0][1]) == 3
    assert meta.query(lambda c: c.lr == 0.5) == []


def test_export_csv(tmp_path, ds, results):
    _fill(tmp_path / "s", ds, results)
    p1, p2 = ms.load(tmp_path / "s").export_csv("line", tmp_path / "out")
    assert len(p1.read_text().splitlines()) == 4
    assert len(p2.read_text().splitlines()) == 10
    assert "final.mase" in p1.read_text().splitlines()[0]


# --------------------------------------------------------------------------
# tabular benchmark view


def test_tabular_lookup_matches_records(tmp_path, ds, results):
    _fill(tmp_path, ds, results)
    bench = ms.to_tabular_benchmark(ms.load(tmp_path), "line")
    assert bench.n_configs == 3 and bench.max_fidelity == 3
    for r in results:
        i = bench.index(r.config_id)
        for e in r.epochs:
            assert bench.lookup(i, e.epoch) == e.val_nll
        assert bench.final(i) == r.final.mase
    with pytest.raises(IndexError):
        bench.lookup(0, 3)


def test_test_metric_cannot_drive_search(tmp_path, ds, results):
    _fill(tmp_path, ds, results)
    meta = ms.load(tmp_path)
    with pytest.raises(UnknownMetric):
        ms.to_tabular_benchmark(meta, "line", objective="test.mase")
    ms.to_tabular_benchmark(meta, "line", objective="test.mase", guard=False)
    with pytest.raises(UnknownMetric):
        ms.to_tabular_benchmark(meta, "line", objective="val.bogus")
    with pytest.raises(EmptySelection):
        ms.to_tabular_benchmark(meta, "nope")


def test_censored_beyond_failed_run(tmp_path, ds, monkeypatch):
    from tsbench import model as M

    real = M.loss_and_grad
    calls = {"n": 0}

    def flaky(params, X, Y):
        calls["n"] += 1
        loss, grads = real(params, X, Y)
        return (math.nan if calls["n"] > 4 else loss), grads

    monkeypatch.setattr(M, "loss_and_grad", flaky)
    failed = run_config(ds, _grid(1)[0])
    monkeypatch.setattr(M, "loss_and_grad", real)
    ok = run_config(ds, _grid(2)[1])
    with ms.MetaStore.open(tmp_path) as store:
        store.append_run(failed, ds)
        store.append_run(ok, ds)
    bench = ms.to_tabular_benchmark(ms.load(tmp_path), "line")
    i = bench.index(failed.config_id)
    assert bench.lookup(i, 0) == failed.epochs[0].val_nll
    assert bench.lookup(i, 1) is CENSORED and bench.lookup(i, 2) is CENSORED
    assert bench.at_fidelity(i, 3) == math.inf
    assert math.isnan(bench.final(i))


def test_manifest_records_metric_aggregation(tmp_path):
    ms.MetaStore.open(tmp_path).close()
    assert ms.load(tmp_path).manifest["metric_aggregation"]["mase"] == "mean over windows"
