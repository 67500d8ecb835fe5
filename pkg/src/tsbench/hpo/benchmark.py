"""Tabular benchmark lookups and the trace every HPO method produces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import jsonio


class _Censored:
    """Marker for a curve queried past its last recorded epoch."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CENSORED"

    def __bool__(self):
        return False


CENSORED = _Censored()


class TabularBenchmark:
    """Config id -> (validation objective curve, final test objective).

    Configs are held in ascending id order, so index order doubles as the
    tie-break order. Epochs are 0-based; a fidelity of ``f`` epochs reads
    epoch ``f - 1``. NaN cells are censored (run stopped or failed earlier).
    """

    def __init__(self, config_ids, descriptors, curves, finals, name: str = "", objective: str = "val.nll"):
        order = np.argsort(np.asarray(config_ids, dtype=object).astype(str), kind="stable")
        self.config_ids = [str(config_ids[i]) for i in order]
        self.descriptors = [dict(descriptors[i]) for i in order]
        self.curves = np.asarray(curves, dtype=float)[order]
        self.finals = np.asarray(finals, dtype=float)[order]
        if self.curves.ndim != 2 or len(self.curves) != len(self.config_ids):
            raise ValueError("curves must be (n_configs, n_epochs)")
        self.curves.setflags(write=False)
        self.finals.setflags(write=False)
        self.name = name
        self.objective = objective
        self._index = {cid: i for i, cid in enumerate(self.config_ids)}

    @property
    def n_configs(self) -> int:
        return len(self.config_ids)

    @property
    def max_fidelity(self) -> int:
        return self.curves.shape[1]

    def index(self, config_id: str) -> int:
        return self._index[config_id]

    def lookup(self, config, epoch: int):
        """Curve value at a 0-based epoch, or ``CENSORED``."""
        i = config if isinstance(config, (int, np.integer)) else self._index[config]
        if not 0 <= epoch < self.max_fidelity:
            raise IndexError(f"epoch {epoch} outside recorded range 0..{self.max_fidelity - 1}")
        v = self.curves[i, epoch]
        return CENSORED if math.isnan(v) else float(v)

    def at_fidelity(self, i: int, fidelity: int) -> float:
        """Objective after ``fidelity`` epochs; censored cells read as +inf."""
        v = self.lookup(i, fidelity - 1)
        return math.inf if v is CENSORED else v

    def final(self, i: int) -> float:
        return float(self.finals[i])


@dataclass
class TraceEntry:
    config_id: str
    index: int
    fidelity: int
    objective: float
    bracket: int | None = None
    round: int | None = None


@dataclass
class HpoTrace:
    method: str
    max_fidelity: int
    entries: list[TraceEntry] = field(default_factory=list)
    incumbents: list[tuple[str, float]] = field(default_factory=list)
    brackets: list[dict] = field(default_factory=list)
    incumbent_index: int | None = None
    incumbent_objective: float = math.inf
    final_test: float = math.nan

    def observe(self, bench: TabularBenchmark, i: int, fidelity: int, bracket=None, round_=None) -> float:
        y = bench.at_fidelity(i, fidelity)
        cid = bench.config_ids[i]
        self.entries.append(TraceEntry(cid, int(i), int(fidelity), y, bracket, round_))
        if self.incumbent_index is None or (y, i) < (self.incumbent_objective, self.incumbent_index):
            self.incumbent_index, self.incumbent_objective = int(i), y
        self.incumbents.append((bench.config_ids[self.incumbent_index], self.incumbent_objective))
        self.final_test = bench.final(self.incumbent_index)
        return y

    @property
    def budget_epochs(self) -> int:
        return sum(e.fidelity for e in self.entries)

    @property
    def budget_trials(self) -> float:
        """Budget in full-fidelity-equivalent trials."""
        return self.budget_epochs / self.max_fidelity

    @property
    def n_configs(self) -> int:
        return len({e.index for e in self.entries})

    @property
    def incumbent_id(self) -> str | None:
        return self.incumbents[-1][0] if self.incumbents else None

    def summary(self) -> dict:
        return {
            "method": self.method,
            "incumbent": self.incumbent_id,
            "incumbent_objective": self.incumbent_objective,
            "final_test": self.final_test,
            "budget_epochs": self.budget_epochs,
            "budget_trials": self.budget_trials,
            "n_configs": self.n_configs,
            "n_evaluations": len(self.entries),
        }

    def to_jsonl(self) -> str:
        lines = [jsonio.dumps({"kind": "summary", **self.summary(), "brackets": self.brackets})]
        for k, (e, (inc, inc_obj)) in enumerate(zip(self.entries, self.incumbents)):
            lines.append(
                jsonio.dumps(
                    {
                        "kind": "eval",
                        "step": k,
                        "config_id": e.config_id,
                        "fidelity": e.fidelity,
                        "objective": e.objective,
                        "bracket": e.bracket,
                        "round": e.round,
                        "incumbent": inc,
                        "incumbent_objective": inc_obj,
                    }
                )
            )
        return "\n".join(lines) + "\n"


def replay(bench: TabularBenchmark, trace: HpoTrace) -> list[float]:
    """Re-query every evaluation of a trace; must equal the recorded objectives."""
    return [bench.at_fidelity(bench.index(e.config_id), e.fidelity) for e in trace.entries]
