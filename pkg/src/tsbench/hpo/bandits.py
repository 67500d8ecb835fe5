"""Random search, successive halving and HyperBand over a tabular benchmark.

Fidelity is counted in training epochs. Every evaluation is charged its full
fidelity (runs restart from scratch), so a trace's epoch budget is the plain
sum of its fidelities. ``trials`` budgets are full-fidelity equivalents:
``trials * R`` epochs.
"""

from __future__ import annotations

import math
import warnings
from fractions import Fraction

import numpy as np

from .benchmark import HpoTrace, TabularBenchmark


class ConfigPool:
    """Draws configs uniformly without replacement."""

    def __init__(self, n: int, rng: np.random.Generator):
        self._order = rng.permutation(n)
        self._next = 0

    @property
    def remaining(self) -> int:
        return len(self._order) - self._next

    def draw(self, k: int) -> np.ndarray:
        k = min(k, self.remaining)
        out = self._order[self._next : self._next + k]
        self._next += k
        return out


def _rank(bench: TabularBenchmark, idx, values, keep: int) -> np.ndarray:
    # ascending objective, ties broken by ascending config id (== index order)
    order = sorted(range(len(idx)), key=lambda k: (values[k], idx[k]))
    return np.asarray([idx[k] for k in order[:keep]], dtype=np.int64)


def random_search(bench: TabularBenchmark, trials: int, rng: np.random.Generator, R: int | None = None) -> HpoTrace:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    R = bench.max_fidelity if R is None else int(R)
    if trials > bench.n_configs:
        warnings.warn(f"{trials} trials requested but only {bench.n_configs} configs exist; capping")
        trials = bench.n_configs
    trace = HpoTrace("random", R)
    for i in ConfigPool(bench.n_configs, rng).draw(trials):
        trace.observe(bench, int(i), R)
    return trace


def sh_schedule(n: int, r: int, eta: float, R: int) -> list[tuple[int, int]]:
    """``(configs, fidelity)`` per round for one successive-halving run.

    Round ``i`` keeps ``floor(n / eta**i)`` configs at ``floor(r * eta**i)``
    epochs (capped at ``R``); it stops once one config is left or the cap is
    hit. A single config is evaluated once at ``R``.
    """
    if n < 1 or r < 1 or eta <= 1:
        raise ValueError("need n >= 1, r >= 1 and eta > 1")
    if n == 1:
        return [(1, R)]
    eta = Fraction(eta)
    rounds = []
    i = 0
    while True:
        n_i = max(1, math.floor(n / eta**i))
        r_i = min(R, max(1, math.floor(r * eta**i)))
        rounds.append((n_i, r_i))
        if n_i == 1 or r_i >= R:
            return rounds
        i += 1


def hyperband_schedule(R: int, eta: float) -> list[tuple[int, list[tuple[int, int]]]]:
    """Bracket table ``[(s, [(n_i, r_i), ...]), ...]`` for s = s_max..0.

    ``n = ceil((s_max+1) * eta**s / (s+1))``, ``n_i = floor(n / eta**i)`` and
    ``r_i = floor(R * eta**(i-s))`` (at least 1), computed in exact arithmetic.
    """
    if R < 1 or eta <= 1:
        raise ValueError("need R >= 1 and eta > 1")
    eta = Fraction(eta)
    s_max = 0
    while eta ** (s_max + 1) <= R:
        s_max += 1
    table = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) * eta**s / (s + 1))
        rounds = [(math.floor(n / eta**i), max(1, math.floor(R * eta ** (i - s)))) for i in range(s + 1)]
        table.append((s, rounds))
    return table


def schedule_cost(rounds) -> int:
    return sum(n * r for n, r in rounds)


def _run_rounds(bench, trace, configs, rounds, bracket=None) -> None:
    alive = np.asarray(configs, dtype=np.int64)
    for k, (_, r_i) in enumerate(rounds):
        values = [trace.observe(bench, int(i), r_i, bracket, k) for i in alive]
        if k + 1 < len(rounds):
            alive = _rank(bench, alive, values, rounds[k + 1][0])


def successive_halving(
    bench: TabularBenchmark,
    n: int,
    r: int,
    eta: float,
    rng: np.random.Generator,
    R: int | None = None,
    trials: int | None = None,
) -> HpoTrace:
    """One successive-halving run, or repeated runs until ``trials * R`` epochs are spent."""
    R = bench.max_fidelity if R is None else int(R)
    trace = HpoTrace("sh", R)
    pool = ConfigPool(bench.n_configs, rng)
    rounds = sh_schedule(n, r, eta, R)
    cost = schedule_cost(rounds)
    budget = None if trials is None else trials * R
    k = 0
    while True:
        if budget is not None and trace.budget_epochs + cost > budget:
            break
        if pool.remaining < rounds[0][0]:
            break
        _run_rounds(bench, trace, pool.draw(rounds[0][0]), rounds, bracket=k)
        trace.brackets.append({"bracket": k, "rounds": rounds, "epochs": cost})
        k += 1
        if budget is None:
            break
    return trace


def hyperband(
    bench: TabularBenchmark,
    R: int | None,
    eta: float,
    rng: np.random.Generator,
    trials: int | None = None,
) -> HpoTrace:
    """HyperBand over brackets s_max..0.

    Without ``trials`` one full iteration runs. With it, iterations repeat
    until the next bracket would overrun ``trials * R`` epochs or the pool of
    unseen configs runs dry.
    """
    R = bench.max_fidelity if R is None else int(R)
    if R > bench.max_fidelity:
        raise ValueError(f"R={R} exceeds the benchmark's recorded fidelity {bench.max_fidelity}")
    table = hyperband_schedule(R, eta)
    trace = HpoTrace("hyperband", R)
    pool = ConfigPool(bench.n_configs, rng)
    budget = None if trials is None else trials * R
    iteration = 0
    while True:
        for s, rounds in table:
            cost = schedule_cost(rounds)
            if budget is not None and trace.budget_epochs + cost > budget:
                return trace
            if pool.remaining < rounds[0][0]:
                return trace
            _run_rounds(bench, trace, pool.draw(rounds[0][0]), rounds, bracket=s)
            trace.brackets.append({"iteration": iteration, "s": s, "rounds": rounds, "epochs": cost})
        iteration += 1
        if budget is None:
            return trace
