import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_fanova
from tsbench.errors import DegenerateVariance, IncompleteGrid, UnknownMetric
from tsbench.importance import GridTable, grid_fanova, prepare_grid
from tsbench.metastore import ConfigRecord, EpochLogRecord, Metadataset
from tsbench.trainer import TrainConfig


def _check_sums(rep):
    total = sum(rep.main.values()) + sum(rep.pairwise.values()) + rep.residual
    assert abs(total - 1.0) < 1e-10


def test_single_factor():
    rep = grid_fanova(GridTable.from_function({"a": [0, 1], "b": [0, 1]}, lambda a, b: a))
    assert rep.main == {"a": 1.0, "b": 0.0}
    assert rep.pairwise[("a", "b")] == 0.0 and abs(rep.residual) < 1e-15


def test_additive_symmetric():
    rep = grid_fanova(GridTable.from_function({"a": [0, 1], "b": [0, 1]}, lambda a, b: a + b))
    assert rep.main == {"a": 0.5, "b": 0.5}


def test_pure_interaction():
    rep = grid_fanova(GridTable.from_function({"a": [-1, 1], "b": [-1, 1]}, lambda a, b: a * b))
    assert rep.main == {"a": 0.0, "b": 0.0}
    assert rep.pairwise[("a", "b")] == 1.0
    _check_sums(rep)


def test_order_one_puts_interactions_in_residual():
    rep = grid_fanova(GridTable.from_function({"a": [-1, 1], "b": [-1, 1]}, lambda a, b: a * b + a), order=1)
    assert rep.pairwise == {} and abs(rep.main["a"] - 0.5) < 1e-15 and abs(rep.residual - 0.5) < 1e-15


def test_degenerate():
    t = GridTable.from_function({"a": [0, 1], "b": [0, 1, 2]}, lambda a, b: 3.0)
    rep = grid_fanova(t)
    assert rep.degenerate and rep.total_variance == 0.0
    assert all(v == 0 for v in rep.main.values()) and rep.residual == 0.0
    with pytest.raises(DegenerateVariance):
        grid_fanova(t, strict=True)


def test_holes_and_single_levels_rejected():
    t = GridTable.from_function({"a": [0, 1], "b": [0, 1]}, lambda a, b: a - b)
    t.values[1, 0] = np.nan
    with pytest.raises(IncompleteGrid) as info:
        grid_fanova(GridTable(t.factors, t.levels, t.values))
    assert info.value.missing == [{"a": 1, "b": 0}]
    with pytest.raises(ValueError):
        grid_fanova(GridTable.from_function({"a": [0], "b": [0, 1]}, lambda a, b: b))


def _random_table(rng, levels):
    names = [f"f{i}" for i in range(len(levels))]
    return GridTable(names, [tuple(range(n)) for n in levels], rng.normal(size=levels))


@pytest.mark.parametrize("levels", [(2, 2), (3, 2), (3, 3, 3), (2, 3, 2, 3), (3, 3, 3, 3)])
def test_brute_force_agreement(levels):
    rng = np.random.default_rng(len(levels) * 10 + sum(levels))
    t = _random_table(rng, list(levels))
    rep = grid_fanova(t)
    main, pair, total = brute_force_fanova(list(levels), lambda c: t.values[c])
    assert abs(rep.total_variance - total) < 1e-12
    for i, f in enumerate(t.factors):
        assert abs(rep.main[f] - main[i]) < 1e-10
    for (i, j), v in pair.items():
        assert abs(rep.pairwise[(t.factors[i], t.factors[j])] - v) < 1e-10


def test_residual_equals_higher_order_share():
    rng = np.random.default_rng(5)
    levels = [3, 2, 3]
    t = _random_table(rng, levels)
    rep = grid_fanova(t)
    # strip every main and pairwise term explicitly, then measure what is left
    v = t.values
    mu = v.mean()
    left = v - mu
    m = [v.mean(axis=tuple(a for a in range(3) if a != i), keepdims=True) - mu for i in range(3)]
    for i in range(3):
        left = left - m[i]
    for i, j in itertools.combinations(range(3), 2):
        k = 3 - i - j
        left = left - (v.mean(axis=k, keepdims=True) - mu - m[i] - m[j])
    assert abs(np.mean(left**2) / rep.total_variance - rep.residual) < 1e-10


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(2, 4), min_size=2, max_size=4),
    st.integers(0, 10_000),
    st.floats(-1e3, 1e3),
    st.floats(0.01, 100.0) | st.floats(-100.0, -0.01),
)
def test_identity_and_invariance(levels, seed, shift, scale):
    t = _random_table(np.random.default_rng(seed), levels)
    rep = grid_fanova(t)
    _check_sums(rep)
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in rep.main.values())
    moved = grid_fanova(GridTable(t.factors, t.levels, t.values * scale + shift))
    for f in t.factors:
        assert abs(moved.main[f] - rep.main[f]) < 1e-9
    for k in rep.pairwise:
        assert abs(moved.pairwise[k] - rep.pairwise[k]) < 1e-9


def test_report_outputs(tmp_path):
    rep = grid_fanova(GridTable.from_function({"a": [0, 1, 2], "b": [0, 1]}, lambda a, b: 2 * a + b + a * b))
    rows = rep.bar_rows()
    assert rows[-1]["factor"] == "residual" and rows[0]["factor"] == "a"
    d = json.loads(rep.to_json())
    assert "a:b" in d["pairwise"]
    text = rep.write_csv(tmp_path / "imp.csv").read_text().splitlines()
    assert text[0] == "factor,importance" and len(text) == 5


# --------------------------------------------------------------------------
# building tables from a metadataset


def _meta(value, seeds=(100, 101, 102), skip=None):
    meta = Metadataset()
    grid = []
    recs = {}
    for ctx, lr, seed in itertools.product((2, 7), (0.01, 0.001), seeds):
        cfg = TrainConfig(dataset="d", context=ctx, lr=lr, seed=seed)
        grid.append(cfg)
        if skip is not None and skip(cfg):
            continue
        v = value(cfg)
        rec = ConfigRecord(cfg.config_id, cfg, "complete", 1, {}, best_epoch=1, n_epochs=2, final={"mase": 10 * v})
        recs[cfg.config_id] = rec
        meta.epochs[cfg.config_id] = [
            EpochLogRecord(cfg.config_id, 0, {"val_nll": 99.0, "val.mase": 99.0}),
            EpochLogRecord(cfg.config_id, 1, {"val_nll": v, "val.mase": 2 * v}),
        ]
    meta.configs["d"] = recs
    meta.manifest["datasets"]["d"] = {"grid_ids": sorted(c.config_id for c in grid)}
    return meta


def test_prepare_grid_averages_seeds():
    meta = _meta(lambda c: c.context + (c.seed - 101))
    t = prepare_grid(meta, "d")
    assert t.factors == ["context", "lr"]
    np.testing.assert_array_equal(t.values, [[2, 2], [7, 7]])
    rep = grid_fanova(t)
    assert rep.main == {"context": 1.0, "lr": 0.0}


def test_prepare_grid_objectives_independent():
    meta = _meta(lambda c: c.context * (2 if c.lr == 0.01 else 1))
    a = prepare_grid(meta, "d", "val.nll").values
    b = prepare_grid(meta, "d", "val.mase").values
    c = prepare_grid(meta, "d", "test.mase").values
    np.testing.assert_array_equal(b, 2 * a)
    np.testing.assert_array_equal(c, 10 * a)
    with pytest.raises(UnknownMetric):
        prepare_grid(meta, "d", "val.bogus")


def test_prepare_grid_seed_factor():
    meta = _meta(lambda c: float(c.seed))
    t = prepare_grid(meta, "d", include_seed=True)
    assert t.factors == ["context", "lr", "seed"]
    assert grid_fanova(t).main["seed"] == pytest.approx(1.0)


def test_prepare_grid_missing_config_named():
    gone = TrainConfig(dataset="d", context=7, lr=0.001, seed=101)
    meta = _meta(lambda c: 1.0, skip=lambda c: c == gone)
    with pytest.raises(IncompleteGrid) as info:
        prepare_grid(meta, "d")
    assert gone.config_id in str(info.value)


def test_prepare_grid_failed_cell_is_a_hole():
    meta = _meta(lambda c: math.nan if (c.context, c.lr) == (2, 0.01) else 1.0)
    with pytest.raises(IncompleteGrid) as info:
        prepare_grid(meta, "d")
    assert info.value.missing == [{"context": 2, "lr": 0.01}]
