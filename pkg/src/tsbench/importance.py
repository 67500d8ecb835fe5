"""Exact functional ANOVA over a complete hyperparameter grid.

On a full Cartesian design the marginal means are known exactly, so the
variance decomposition needs no surrogate model.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import jsonio
from .errors import DegenerateVariance, IncompleteGrid, UnknownMetric
from .metastore import Metadataset
from .metrics import METRIC_KEYS
from .trainer import GRID_AXES

DEFAULT_OBJECTIVE = "val.nll"


@dataclass
class GridTable:
    """Cell values on a full factorial; axis ``i`` of ``values`` is ``factors[i]``."""

    factors: list[str]
    levels: list[tuple]
    values: np.ndarray
    mask: np.ndarray | None = None
    objective: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mask is None:
            self.mask = np.isfinite(self.values)
        if self.values.shape != tuple(len(lv) for lv in self.levels):
            raise ValueError(f"values shape {self.values.shape} does not match levels")
        if len(self.factors) != self.values.ndim:
            raise ValueError("one factor name per axis required")

    @classmethod
    def from_function(cls, factors: dict, fn) -> "GridTable":
        """Evaluate ``fn(**cell)`` on every cell of the product of ``factors``."""
        names = list(factors)
        levels = [tuple(v) for v in factors.values()]
        values = np.empty([len(lv) for lv in levels])
        for idx in itertools.product(*(range(len(lv)) for lv in levels)):
            values[idx] = fn(**{n: levels[k][i] for k, (n, i) in enumerate(zip(names, idx))})
        return cls(names, levels, values)

    def missing(self) -> list[dict]:
        bad = np.argwhere(~(self.mask & np.isfinite(self.values)))
        return [{f: self.levels[k][i] for k, (f, i) in enumerate(zip(self.factors, idx))} for idx in bad]


@dataclass
class ImportanceReport:
    factors: list[str]
    main: dict
    pairwise: dict = field(default_factory=dict)
    residual: float = 0.0
    total_variance: float = 0.0
    grand_mean: float = 0.0
    degenerate: bool = False
    objective: str = ""

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "factors": self.factors,
            "main": self.main,
            "pairwise": {f"{a}:{b}": v for (a, b), v in self.pairwise.items()},
            "residual": self.residual,
            "total_variance": self.total_variance,
            "grand_mean": self.grand_mean,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return jsonio.dumps(self.to_dict())

    def bar_rows(self) -> list[dict]:
        """``(factor, importance)`` rows, largest first, residual last."""
        rows = [{"factor": f, "importance": v} for f, v in self.main.items()]
        rows += [{"factor": f"{a}:{b}", "importance": v} for (a, b), v in self.pairwise.items()]
        rows.sort(key=lambda r: -r["importance"])
        rows.append({"factor": "residual", "importance": self.residual})
        return rows

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["factor", "importance"])
            for row in self.bar_rows():
                w.writerow([row["factor"], jsonio.format_float(row["importance"])])
        return path


def _effect(values: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    drop = tuple(a for a in range(values.ndim) if a not in keep)
    return values.mean(axis=drop, keepdims=True) if drop else values


def grid_fanova(table: GridTable, order: int = 2, strict: bool = False) -> ImportanceReport:
    """Main effects (and pairwise interactions for ``order=2``) as variance shares.

    A grid whose cells are all equal has no variance to explain; every
    importance is then 0 and ``degenerate`` is set (``strict`` raises instead).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    missing = table.missing()
    if missing:
        raise IncompleteGrid(missing)
    too_few = [f for f, lv in zip(table.factors, table.levels) if len(lv) < 2]
    if too_few:
        raise ValueError(f"factors need at least two levels: {too_few}")
    v = table.values
    mu = float(v.mean())
    names = list(table.factors)
    if np.ptp(v) == 0.0:
        if strict:
            raise DegenerateVariance("all cells are equal")
        pairs = {p: 0.0 for p in itertools.combinations(names, 2)} if order == 2 else {}
        return ImportanceReport(names, {f: 0.0 for f in names}, pairs, 0.0, 0.0, mu, True, table.objective)

    centred = v - mu
    total = float(np.mean(centred**2))
    mains = [_effect(centred, (i,)) for i in range(v.ndim)]
    main = {names[i]: float(np.mean(m**2)) / total for i, m in enumerate(mains)}
    pairwise = {}
    if order == 2:
        for i, j in itertools.combinations(range(v.ndim), 2):
            fij = _effect(centred, (i, j)) - mains[i] - mains[j]
            pairwise[(names[i], names[j])] = float(np.mean(fij**2)) / total
    residual = 1.0 - math.fsum(main.values()) - math.fsum(pairwise.values())
    return ImportanceReport(names, main, pairwise, residual, total, mu, False, table.objective)


def _objective_value(rec, meta: Metadataset, objective: str) -> float:
    side, _, metric = objective.partition(".")
    if metric not in METRIC_KEYS or side not in ("val", "test"):
        raise UnknownMetric(f"unknown objective {objective!r}")
    if side == "test":
        return float(rec.final.get(metric, math.nan))
    if rec.best_epoch is None:
        return math.nan
    key = "val_nll" if metric == "nll" else objective
    for e in meta.epochs_of(rec.config_id):
        if e.epoch == rec.best_epoch:
            return float(e.values.get(key, math.nan))
    return math.nan


def prepare_grid(
    meta: Metadataset,
    dataset: str,
    objective: str = DEFAULT_OBJECTIVE,
    include_seed: bool = False,
) -> GridTable:
    """Average ``objective`` over seeds for every grid cell of ``dataset``.

    ``val.<metric>`` is read at the best validation epoch, ``test.<metric>``
    from the final test report. Factors with a single observed level are
    dropped; holes (unrun, failed or non-finite cells) raise ``IncompleteGrid``.
    """
    recs = meta.records(dataset)
    if not recs:
        raise IncompleteGrid([f"dataset {dataset!r} has no runs"])
    factors = [k for k in GRID_AXES if include_seed or k != "seed"]
    missing_ids, _ = meta.grid_check(dataset)
    if missing_ids:
        raise IncompleteGrid(sorted(missing_ids))
    levels = {f: sorted({getattr(r.config, f) for r in recs}, key=_level_key) for f in factors}
    factors = [f for f in factors if len(levels[f]) > 1]
    cells: dict[tuple, list[float]] = {}
    for r in recs:
        key = tuple(getattr(r.config, f) for f in factors)
        cells.setdefault(key, []).append(_objective_value(r, meta, objective))
    lv = [tuple(levels[f]) for f in factors]
    values = np.full([len(x) for x in lv], np.nan)
    holes = []
    for idx in itertools.product(*(range(len(x)) for x in lv)):
        key = tuple(lv[k][i] for k, i in enumerate(idx))
        got = cells.get(key)
        if got is None or not all(math.isfinite(g) for g in got):
            holes.append(dict(zip(factors, key)))
            continue
        values[idx] = float(np.mean(got))
    if holes:
        raise IncompleteGrid(holes)
    return GridTable(factors, lv, values, objective=objective)


def _level_key(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))
