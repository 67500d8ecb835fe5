"""Method registry, multi-task comparison and planted synthetic benchmarks."""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from ..trainer import full_grid
from .bandits import hyperband, random_search, successive_halving
from .benchmark import HpoTrace, TabularBenchmark
from .bo import rf_surrogate_bo
from .ranking import CDReport, rank_and_cd

Method = Callable[[TabularBenchmark, int, np.random.Generator], HpoTrace]


def _random(bench, trials, rng):
    return random_search(bench, trials, rng)


def _sh(bench, trials, rng, n=81, r=1, eta=3):
    return successive_halving(bench, n, r, eta, rng, trials=trials)


def _hyperband(bench, trials, rng, eta=3):
    return hyperband(bench, bench.max_fidelity, eta, rng, trials=trials)


def _rfbo(bench, trials, rng, init=10):
    # short budgets shrink the initial design rather than fail
    return rf_surrogate_bo(bench, trials, min(init, max(trials, 2)), rng)


# external strategies can be registered with the same (bench, trials, rng) signature
METHODS: dict[str, Method] = {
    "random": _random,
    "sh": _sh,
    "hyperband": _hyperband,
    "rfbo": _rfbo,
}


def method_rng(seed: int, method: str, task: str = "") -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(method.encode()), zlib.crc32(task.encode())])


def run_method(name: str, bench: TabularBenchmark, trials: int, seed: int) -> HpoTrace:
    if name not in METHODS:
        raise KeyError(f"unknown HPO method {name!r}; known: {sorted(METHODS)}")
    return METHODS[name](bench, trials, method_rng(seed, name, bench.name))


def compare_methods(
    benchmarks: list[TabularBenchmark],
    methods=("random", "sh", "hyperband", "rfbo"),
    trials: int = 50,
    seeds=range(20),
    alpha: float = 0.05,
) -> tuple[dict, CDReport]:
    """Seed-averaged final test objective of each method's incumbent per task,
    then Friedman/Nemenyi ranking across tasks."""
    results = {}
    for bench in benchmarks:
        row = {}
        for m in methods:
            row[m] = float(np.mean([run_method(m, bench, trials, s).final_test for s in seeds]))
        results[bench.name] = row
    return results, rank_and_cd(results, alpha)


def planted_benchmark(task_seed: int, R: int = 50, name: str | None = None, curve_noise: float = 0.5) -> TabularBenchmark:
    """Synthetic benchmark on the full 4,860-cell grid.

    The final validation objective is a smooth function of the hyperparameters
    (quadratic bowls in log-space plus categorical offsets) with small seed
    noise; learning curves decay monotonically onto it with a per-config
    amplitude, so early epochs rank configs only approximately.
    """
    rng = np.random.default_rng([task_seed, 7])
    grid = full_grid(f"planted{task_seed}")
    desc = [
        {k: getattr(c, k) for k in ("context", "strategy", "shape", "dist_hidden", "lr", "weight_decay", "seed")}
        for c in grid
    ]
    n = len(desc)
    f = np.zeros(n)
    for key, transform in (
        ("context", np.log),
        ("dist_hidden", np.log),
        ("lr", np.log),
        ("weight_decay", lambda v: np.log(v + 1e-3)),
    ):
        z = transform(np.asarray([d[key] for d in desc], dtype=float))
        lo, hi = z.min(), z.max()
        centre = rng.uniform(lo, hi)
        f += rng.uniform(0.2, 1.0) * ((z - centre) / (hi - lo)) ** 2
    for key in ("shape", "strategy"):
        levels = sorted({d[key] for d in desc})
        offsets = dict(zip(levels, rng.uniform(0.0, 0.5 if key == "shape" else 0.1, len(levels))))
        f += np.asarray([offsets[d[key]] for d in desc])
    f += rng.normal(0.0, 0.02, n)

    epochs = np.arange(R)
    decay = ((R - 1 - epochs) / max(R - 1, 1)) ** 2
    amplitude = curve_noise * (0.5 + rng.uniform(size=n))
    curves = f[:, None] + amplitude[:, None] * decay[None, :]
    finals = f + rng.normal(0.0, 0.01, n)
    ids = [c.config_id for c in grid]
    return TabularBenchmark(ids, desc, curves, finals, name=name or f"planted{task_seed:02d}")
