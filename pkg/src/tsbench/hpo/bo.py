"""Bayesian optimisation with a random-forest surrogate and expected improvement."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm

from .benchmark import HpoTrace, TabularBenchmark
from .forest import RandomForest

LOG_EPS = 1e-3


def encode_descriptors(descriptors: list[dict], exclude=("seed", "dataset")) -> np.ndarray:
    """One-hot categoricals, log-scaled positive numerics (``log(v + eps)`` for
    fields that can be zero, e.g. weight decay)."""
    keys = [k for k in descriptors[0] if k not in exclude]
    columns = []
    for k in keys:
        vals = [d[k] for d in descriptors]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            arr = np.asarray(vals, dtype=float)
            if (arr > 0).all():
                columns.append(np.log(arr)[:, None])
            elif (arr >= 0).all():
                columns.append(np.log(arr + LOG_EPS)[:, None])
            else:
                columns.append(arr[:, None])
        else:
            levels = sorted({str(v) for v in vals})
            onehot = np.zeros((len(vals), len(levels)))
            pos = {lv: j for j, lv in enumerate(levels)}
            for row, v in enumerate(vals):
                onehot[row, pos[str(v)]] = 1.0
            columns.append(onehot)
    return np.hstack(columns) if columns else np.zeros((len(descriptors), 0))


def _encoded(bench: TabularBenchmark):
    cached = getattr(bench, "_bo_encoding", None)
    if cached is None:
        X = encode_descriptors(bench.descriptors)
        uniq, row_of = np.unique(X, axis=0, return_inverse=True)
        cached = (X, uniq, row_of.ravel())
        bench._bo_encoding = cached
    return cached


def expected_improvement(mean, var, best) -> np.ndarray:
    sd = np.sqrt(np.maximum(var, 0.0))
    gap = best - mean
    out = np.maximum(gap, 0.0)
    pos = sd > 0
    z = gap[pos] / sd[pos]
    out[pos] = gap[pos] * norm.cdf(z) + sd[pos] * norm.pdf(z)
    return out


def rf_surrogate_bo(
    bench: TabularBenchmark,
    trials: int,
    init: int,
    rng: np.random.Generator,
    R: int | None = None,
    forest: RandomForest | None = None,
) -> HpoTrace:
    if init < 2 or trials < init:
        raise ValueError("need trials >= init >= 2")
    R = bench.max_fidelity if R is None else int(R)
    forest = forest or RandomForest()
    trials = min(trials, bench.n_configs)
    X, uniq, row_of = _encoded(bench)
    trace = HpoTrace("rfbo", R)
    evaluated = np.zeros(bench.n_configs, dtype=bool)
    ys = []
    for i in rng.choice(bench.n_configs, size=init, replace=False):
        ys.append(trace.observe(bench, int(i), R))
        evaluated[i] = True
    while len(trace.entries) < trials:
        cand = np.flatnonzero(~evaluated)  # ascending index == ascending config id
        y = np.asarray(ys)
        finite = np.isfinite(y)
        if finite.any():
            y = np.where(finite, y, y[finite].max())
        if not finite.any() or np.ptp(y) == 0.0:
            pick = int(cand[rng.integers(len(cand))])
        else:
            obs_rows = np.asarray([e.index for e in trace.entries])
            forest.fit(X[obs_rows], y, seed=int(rng.integers(2**31 - 1)))
            need = np.unique(row_of[cand])
            mean, var = forest.predict(uniq[need])
            ei_rows = np.full(len(uniq), -np.inf)
            ei_rows[need] = expected_improvement(mean, var, y.min())
            ei = ei_rows[row_of[cand]]
            pick = int(cand[int(np.argmax(ei))])
        ys.append(trace.observe(bench, pick, R))
        evaluated[pick] = True
    return trace
