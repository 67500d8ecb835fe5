import math

import numpy as np
import pytest

from conftest import linear_dataset
from tsbench import model as M
from tsbench.errors import MissingValues
from tsbench.trainer import (
    GRID_AXES,
    TrainConfig,
    full_grid,
    run_config,
    sweep_grid,
)
from tsbench.tsf import make_dataset, split_dataset

FAST = dict(epochs=3, batches_per_epoch=5, batch_size=16, samples=20)


def _cfg(**kw):
    base = dict(dataset="line", context=7, **FAST)
    base.update(kw)
    return TrainConfig(**base)


def test_grid_size_and_unique_ids():
    grid = full_grid("x")
    assert len(grid) == 5 * 2 * 6 * 3 * 3 * 3 * 3 == 4860
    assert len({c.config_id for c in grid}) == 4860
    assert all(not c.off_grid() for c in grid)


def test_config_id_stable_and_sensitive():
    a, b = _cfg(), _cfg()
    assert a.config_id == b.config_id and len(a.config_id) == 16
    assert _cfg(lr=0.01).config_id != a.config_id
    # ints and floats with the same value hash alike
    assert _cfg(weight_decay=0).config_id == _cfg(weight_decay=0.0).config_id


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(strategy="CV")
    with pytest.raises(ValueError):
        _cfg(shape="Round")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"dataset": "a", "colour": 1})
    assert _cfg(context=5).off_grid() == ["context", "budget"]


def test_run_deterministic():
    ds = linear_dataset()
    a = run_config(ds, _cfg())
    b = run_config(ds, _cfg())
    assert a.fingerprint() == b.fingerprint()
    assert a.status == "complete" and len(a.epochs) == 3
    assert [e.epoch for e in a.epochs] == [0, 1, 2]


def test_seed_changes_result():
    ds = linear_dataset()
    a = run_config(ds, _cfg(seed=100))
    b = run_config(ds, _cfg(seed=101))
    assert a.fingerprint()["epochs"] != b.fingerprint()["epochs"]


def test_best_epoch_minimises_validation_nll():
    r = run_config(linear_dataset(), _cfg(epochs=5))
    nll = [e.val_nll for e in r.epochs]
    assert r.best_epoch == int(np.argmin(nll))
    assert r.final.to_dict() == r.epochs[r.best_epoch].test.to_dict()


def test_epoch_record_contents():
    r = run_config(linear_dataset(), _cfg())
    flat = r.epochs[0].flat()
    for key in ("train_nll", "val_nll", "val.mase", "test.crps", "test.wql_0.5"):
        assert key in flat and math.isfinite(flat[key])
    layers = {k.split(".")[1] for k in flat if k.startswith("grad.")}
    assert layers == set(M.build(M.ArchitectureSpec("Base", 7, 4, 1), 0).layer_groups())
    g = r.epochs[0].grad_stats[next(iter(r.epochs[0].grad_stats))]
    assert g["q0.1"] <= g["median"] <= g["q0.9"] <= g["max"]
    assert r.param_count == M.param_count(M.ArchitectureSpec("Base", 7, 4, 1))


def test_missing_values_rejected():
    ds = make_dataset([[1.0, np.nan, 3.0] * 10], horizon=2)
    with pytest.raises(MissingValues):
        run_config(ds, _cfg(dataset=ds.name))


def test_failed_run_keeps_partial_curve(monkeypatch):
    real = M.loss_and_grad
    calls = {"n": 0}

    def flaky(params, X, Y):
        calls["n"] += 1
        loss, grads = real(params, X, Y)
        return (math.nan if calls["n"] > 7 else loss), grads

    monkeypatch.setattr(M, "loss_and_grad", flaky)
    r = run_config(linear_dataset(), _cfg())
    assert r.status == "failed" and "non-finite" in r.error
    # the first epoch (5 batches) finished before the loss broke
    assert len(r.epochs) == 1 and r.best_epoch == 0 and r.final is None


# --------------------------------------------------------------------------
# leakage


def _record_batches(ds, cfg):
    seen = []
    r = run_config(ds, cfg, on_batch=lambda phase, sidx, starts: seen.append((phase, sidx.copy(), starts.copy())))
    return r, seen


@pytest.mark.parametrize("strategy", ["OOS", "ReOOS", "IS"])
def test_no_target_leaks_past_region(strategy):
    ds = linear_dataset(n_series=4, length=60, horizon=4)
    splits = split_dataset(ds, 4)
    r, seen = _record_batches(ds, _cfg(strategy=strategy))
    assert seen
    for phase, sidx, starts in seen:
        limit = splits.train_end if phase == "search" else splits.val_end
        assert (starts + 4 <= limit[sidx]).all()


def test_reoos_retrains_best_epoch_count():
    ds = linear_dataset()
    cfg = _cfg(strategy="ReOOS", epochs=4)
    r, seen = _record_batches(ds, cfg)
    retrain = [s for s in seen if s[0] == "retrain"]
    assert len(r.retrain_train_nll) == r.best_epoch + 1
    assert len(retrain) == (r.best_epoch + 1) * cfg.batches_per_epoch
    splits = split_dataset(ds, 4)
    # the retrain phase reaches into the validation block
    assert any((st + 4 > splits.train_end[si]).any() for _, si, st in retrain)


def test_is_holdout_never_trained_on():
    ds = linear_dataset(n_series=3, length=80)
    from tsbench.tsf import with_holdout

    cfg = _cfg(strategy="IS", epochs=2)
    held = with_holdout(split_dataset(ds, 4), cfg.is_fraction, cfg.seed).holdout
    _, seen = _record_batches(ds, cfg)
    used = {(int(i), int(s)) for _, si, st in seen for i, s in zip(si, st)}
    assert held and used.isdisjoint(held)


# --------------------------------------------------------------------------
# sweeps


def test_sweep_deduplicates_and_sorts():
    ds = linear_dataset(n_series=2, length=40)
    grid = [_cfg(epochs=1), _cfg(epochs=1), _cfg(epochs=1, lr=0.01)]
    res = sweep_grid(ds, grid)
    assert len(res) == 2
    assert [r.config_id for r in res] == sorted(r.config_id for r in res)


def test_sweep_isolates_failures():
    ds = linear_dataset(n_series=2, length=40)
    grid = [_cfg(epochs=1), _cfg(epochs=1, context=7, horizon=39)]
    res = sweep_grid(ds, grid)
    status = sorted(r.status for r in res)
    assert status == ["complete", "failed"]


def test_parallel_sweep_matches_serial():
    ds = linear_dataset(n_series=2, length=40)
    grid = [_cfg(epochs=1, lr=lr) for lr in GRID_AXES["lr"]]
    a = [r.fingerprint() for r in sweep_grid(ds, grid, parallelism=1)]
    b = [r.fingerprint() for r in sweep_grid(ds, grid, parallelism=2)]
    assert a == b
