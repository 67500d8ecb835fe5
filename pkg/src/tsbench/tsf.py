"""Monash ``.tsf`` ingest, time-wise splits and window sampling.

Datasets with several series are treated as independent univariate series.
Timestamps are parsed and carried through but never used for modelling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyRegion,
    HorizonTooLarge,
    MalformedHeader,
    MissingDataSection,
    MissingValueMarker,
    NonNumericValue,
    RaggedLine,
)

KNOWN_FREQUENCIES = ("yearly", "quarterly", "monthly", "weekly", "daily", "hourly", "half_hourly")

SEASONALITY = {
    "yearly": 1,
    "quarterly": 4,
    "monthly": 12,
    "weekly": 52,
    "daily": 7,
    "hourly": 24,
    "half_hourly": 48,
}

DEFAULT_HORIZON = {
    "yearly": 4,
    "quarterly": 8,
    "monthly": 12,
    "weekly": 8,
    "daily": 30,
    "hourly": 168,
}

TIMESTAMP_FORMAT = "%Y-%m-%d %H-%M-%S"
DEFAULT_ATTRIBUTES = (("series_name", "string"), ("start_timestamp", "date"))
REGIONS = ("train", "train_plus_val", "in_sample")


@dataclass(frozen=True)
class Series:
    id: str
    start: datetime | None
    values: np.ndarray
    extra: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Series):
            return NotImplemented
        return (
            self.id == other.id
            and self.start == other.start
            and self.extra == other.extra
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class TimeSeriesDataset:
    name: str
    frequency: str
    horizon: int
    seasonality: int
    equal_length: bool
    contains_missing: bool
    series: tuple[Series, ...]
    attributes: tuple[tuple[str, str], ...] = DEFAULT_ATTRIBUTES

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "attributes", tuple(tuple(a) for a in self.attributes))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.seasonality < 1:
            raise ValueError("seasonality must be >= 1")
        if any(len(s) < 1 for s in self.series):
            raise ValueError("every series needs at least one observation")
        if self.equal_length and len({len(s) for s in self.series}) > 1:
            raise ValueError("equal_length is set but series lengths differ")

    @property
    def lengths(self) -> list[int]:
        return [len(s) for s in self.series]

    def stats(self) -> dict:
        """Header plus series-count/length statistics, one flat dict."""
        lengths = self.lengths
        return {
            "name": self.name,
            "series": len(self.series),
            "min_len": min(lengths) if lengths else 0,
            "max_len": max(lengths) if lengths else 0,
            "freq": self.frequency,
            "horizon": self.horizon,
            "seasonality": self.seasonality,
            "equal_length": self.equal_length,
            "missing": self.contains_missing,
        }


def seasonality_for(frequency: str, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    return SEASONALITY.get(frequency, 1)


def _parse_bool(token: str, directive: str) -> bool:
    low = token.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    raise MalformedHeader(f"@{directive} expects true/false, got {token!r}")


def parse_tsf(
    text: str,
    name: str | None = None,
    horizon: int | None = None,
    seasonality: int | None = None,
) -> TimeSeriesDataset:
    """Parse the contents of a ``.tsf`` file.

    ``horizon`` and ``seasonality`` override the file header and the
    frequency defaults respectively.
    """
    attributes: list[tuple[str, str]] = []
    frequency = None
    file_horizon = None
    missing_flag = None
    equal_flag = None
    relation = None
    in_data = False
    rows: list[tuple[int, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if in_data:
            rows.append((lineno, line))
            continue
        if not line.startswith("@"):
            raise MissingDataSection(f"line {lineno}: series data found before an @data line")
        parts = line.split(None, 1)
        directive = parts[0][1:].lower()
        arg = parts[1].strip() if len(parts) > 1 else ""
        if directive == "data":
            in_data = True
        elif directive == "attribute":
            bits = arg.split()
            if len(bits) != 2:
                raise MalformedHeader(f"line {lineno}: @attribute needs a name and a type")
            attributes.append((bits[0], bits[1].lower()))
        elif directive == "frequency":
            frequency = arg.lower()
        elif directive == "horizon":
            try:
                file_horizon = int(arg)
            except ValueError:
                raise MalformedHeader(f"line {lineno}: @horizon expects an integer") from None
        elif directive == "missing":
            missing_flag = _parse_bool(arg, "missing")
        elif directive == "equallength":
            equal_flag = _parse_bool(arg, "equallength")
        elif directive == "relation":
            relation = arg
        else:
            raise MalformedHeader(f"line {lineno}: unknown directive @{directive}")

    if not in_data:
        raise MissingDataSection("no @data section found")

    frequency = frequency or "other"
    series = []
    saw_missing = False
    n_attr = len(attributes)
    for lineno, line in rows:
        fields = line.split(":")
        # timestamps use '-' separators, so a plain split on ':' is safe
        if len(fields) != n_attr + 1:
            raise RaggedLine(
                f"line {lineno}: expected {n_attr} attribute(s) plus values, got {len(fields) - 1}",
                line=lineno,
            )
        attr_values = fields[:n_attr]
        values = []
        for tok in fields[-1].split(","):
            tok = tok.strip()
            if tok == "?":
                if missing_flag is False:
                    raise MissingValueMarker(f"line {lineno}: '?' found but @missing is false")
                saw_missing = True
                values.append(math.nan)
                continue
            try:
                v = float(tok)
            except ValueError:
                raise NonNumericValue(f"line {lineno}: non-numeric value {tok!r}", line=lineno) from None
            if not math.isfinite(v):
                raise NonNumericValue(f"line {lineno}: non-finite value {tok!r}", line=lineno)
            values.append(v)
        sid, start, extra = None, None, {}
        for (aname, atype), raw in zip(attributes, attr_values):
            if atype == "string" and sid is None:
                sid = raw
            elif atype == "date" and start is None:
                try:
                    start = datetime.strptime(raw.strip(), TIMESTAMP_FORMAT)
                except ValueError:
                    raise MalformedHeader(f"line {lineno}: bad timestamp {raw!r}") from None
            else:
                extra[aname] = raw
        if sid is None:
            sid = f"T{len(series) + 1}"
        series.append(Series(sid, start, np.asarray(values, dtype=float), extra))

    if horizon is None:
        horizon = file_horizon if file_horizon is not None else DEFAULT_HORIZON.get(frequency, 1)
    lengths = {len(s) for s in series}
    equal_length = equal_flag if equal_flag is not None else len(lengths) <= 1
    if equal_length and len(lengths) > 1:
        raise MalformedHeader("@equallength true but series lengths differ")
    return TimeSeriesDataset(
        name=name or relation or "dataset",
        frequency=frequency,
        horizon=int(horizon),
        seasonality=seasonality_for(frequency, seasonality),
        equal_length=equal_length,
        contains_missing=bool(missing_flag) if missing_flag is not None else saw_missing,
        series=tuple(series),
        attributes=tuple(attributes) if attributes else (),
    )


def read_tsf(path, **kwargs) -> TimeSeriesDataset:
    path = Path(path)
    kwargs.setdefault("name", None)
    ds = parse_tsf(path.read_text(encoding="utf-8", errors="replace"), **kwargs)
    if kwargs["name"] is None and ds.name == "dataset":
        ds = replace(ds, name=path.stem)
    return ds


def _fmt_value(v: float) -> str:
    if math.isnan(v):
        return "?"
    return repr(float(v))


def serialize_tsf(ds: TimeSeriesDataset) -> str:
    lines = [f"@relation {ds.name}"]
    for aname, atype in ds.attributes:
        lines.append(f"@attribute {aname} {atype}")
    lines.append(f"@frequency {ds.frequency}")
    lines.append(f"@horizon {ds.horizon}")
    lines.append(f"@missing {'true' if ds.contains_missing else 'false'}")
    lines.append(f"@equallength {'true' if ds.equal_length else 'false'}")
    lines.append("@data")
    for s in ds.series:
        fields = []
        used_id = used_start = False
        for aname, atype in ds.attributes:
            if atype == "string" and not used_id:
                fields.append(s.id)
                used_id = True
            elif atype == "date" and not used_start:
                fields.append(s.start.strftime(TIMESTAMP_FORMAT) if s.start else "")
                used_start = True
            else:
                fields.append(str(s.extra.get(aname, "")))
        fields.append(",".join(_fmt_value(v) for v in s.values))
        lines.append(":".join(fields))
    return "\n".join(lines) + "\n"


def make_dataset(
    values: Sequence[Iterable[float]],
    frequency: str = "other",
    horizon: int = 1,
    name: str = "synthetic",
    seasonality: int | None = None,
    start: datetime | None = datetime(2000, 1, 1),
) -> TimeSeriesDataset:
    """Build a dataset from raw value lists (ids ``T1``, ``T2``...)."""
    series = tuple(
        Series(f"T{i + 1}", start, np.asarray(list(v), dtype=float)) for i, v in enumerate(values)
    )
    lengths = {len(s) for s in series}
    return TimeSeriesDataset(
        name=name,
        frequency=frequency,
        horizon=horizon,
        seasonality=seasonality_for(frequency, seasonality),
        equal_length=len(lengths) <= 1,
        contains_missing=any(np.isnan(s.values).any() for s in series),
        series=series,
    )


# --------------------------------------------------------------------------
# splits and windows


@dataclass(frozen=True)
class DataSplits:
    """Per-series region boundaries.

    Test is the last ``horizon`` points, validation the ``horizon`` points
    before it, train everything else. ``holdout`` holds in-sample validation
    positions as ``(series index, target start)`` pairs, when in use.
    """

    values: tuple[np.ndarray, ...]
    series_ids: tuple[str, ...]
    train_end: np.ndarray
    val_end: np.ndarray
    test_end: np.ndarray
    horizon: int
    holdout: frozenset = frozenset()

    @property
    def n_series(self) -> int:
        return len(self.values)

    @property
    def val_eligible(self) -> np.ndarray:
        """Series long enough (>= 2*horizon + 1) to take part in validation."""
        return self.train_end >= 1


def split_dataset(ds: TimeSeriesDataset, horizon: int | None = None) -> DataSplits:
    delta = ds.horizon if horizon is None else int(horizon)
    if delta < 1:
        raise ValueError("horizon must be >= 1")
    lengths = np.array(ds.lengths, dtype=np.int64)
    if len(lengths) and delta >= lengths.min():
        raise HorizonTooLarge(f"horizon {delta} >= shortest series length {lengths.min()}")
    return DataSplits(
        values=tuple(s.values for s in ds.series),
        series_ids=tuple(s.id for s in ds.series),
        train_end=np.maximum(lengths - 2 * delta, 0),
        val_end=lengths - delta,
        test_end=lengths,
        horizon=delta,
    )


@dataclass(frozen=True)
class Window:
    x: np.ndarray
    y: np.ndarray
    series_id: str
    end: int  # target start; the context ends just before it
    series_index: int = -1
    history: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return (
            self.series_id == other.series_id
            and self.end == other.end
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def context_of(values: np.ndarray, start: int, context: int) -> np.ndarray:
    """The ``context`` points before ``start``, left-padded with the earliest value."""
    if start < 1:
        raise ValueError("a window needs at least one observed context point")
    lo = start - context
    if lo >= 0:
        return values[lo:start].copy()
    return np.concatenate([np.full(-lo, values[0]), values[:start]])


def _region_end(splits: DataSplits, region: str) -> np.ndarray:
    if region in ("train", "in_sample"):
        return splits.train_end
    if region == "train_plus_val":
        return splits.val_end
    raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")


def region_positions(splits: DataSplits, region: str) -> tuple[np.ndarray, np.ndarray]:
    """All ``(series index, target start)`` pairs whose target lies inside ``region``."""
    ends = _region_end(splits, region)
    delta = splits.horizon
    sidx, starts = [], []
    for i, end in enumerate(ends):
        n = int(end) - delta  # starts 1..end-delta inclusive
        if n >= 1:
            sidx.append(np.full(n, i, dtype=np.int64))
            starts.append(np.arange(1, n + 1, dtype=np.int64))
    if not sidx:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    sidx, starts = np.concatenate(sidx), np.concatenate(starts)
    if region == "in_sample" and splits.holdout:
        keep = np.array([(int(i), int(s)) not in splits.holdout for i, s in zip(sidx, starts)], dtype=bool)
        sidx, starts = sidx[keep], starts[keep]
    return sidx, starts


class WindowSampler:
    """Uniform sampler over the valid target positions of one region.

    Precomputes a flat padded buffer so a batch is two fancy-index gathers.
    """

    def __init__(self, splits: DataSplits, region: str, context: int, horizon: int | None = None):
        if context < 1:
            raise ValueError("context must be >= 1")
        self.splits = splits
        self.region = region
        self.context = int(context)
        self.horizon = splits.horizon if horizon is None else int(horizon)
        if self.horizon != splits.horizon:
            raise ValueError("sampler horizon must match the splits horizon")
        self.sidx, self.starts = region_positions(splits, region)
        if len(self.sidx) == 0:
            raise EmptyRegion(f"no valid target position in region {region!r}")
        C = self.context
        offsets, chunks, pos = [], [], 0
        for v in splits.values:
            offsets.append(pos)
            chunks.append(np.full(C, v[0]))
            chunks.append(v)
            pos += C + len(v)
        self._flat = np.concatenate(chunks)
        self._offsets = np.asarray(offsets, dtype=np.int64)
        self._ctx = np.arange(C, dtype=np.int64)
        self._tgt = np.arange(self.horizon, dtype=np.int64) + C

    @property
    def n_positions(self) -> int:
        return len(self.sidx)

    def gather(self, which: np.ndarray):
        base = self._offsets[self.sidx[which]] + self.starts[which]
        X = self._flat[base[:, None] + self._ctx]
        Y = self._flat[base[:, None] + self._tgt]
        return X, Y

    def sample(self, count: int, rng: np.random.Generator):
        """Return ``(X, Y, series_index, target_start)`` arrays for ``count`` draws."""
        if count < 1:
            raise ValueError("count must be >= 1")
        which = rng.integers(0, self.n_positions, size=count)
        X, Y = self.gather(which)
        return X, Y, self.sidx[which], self.starts[which]


def sample_training_batch(
    splits: DataSplits,
    region: str,
    context: int,
    horizon: int,
    count: int,
    rng: np.random.Generator,
) -> list[Window]:
    sampler = WindowSampler(splits, region, context, horizon)
    X, Y, sidx, starts = sampler.sample(count, rng)
    return [
        Window(X[k], Y[k], splits.series_ids[i], int(s), int(i))
        for k, (i, s) in enumerate(zip(sidx, starts))
    ]


def make_eval_windows(splits: DataSplits, context: int, stage: str) -> list[Window]:
    if stage == "validation":
        starts, eligible = splits.train_end, splits.val_eligible
    elif stage == "test":
        starts, eligible = splits.val_end, np.ones(splits.n_series, dtype=bool)
    else:
        raise ValueError(f"stage must be 'validation' or 'test', got {stage!r}")
    delta = splits.horizon
    out = []
    for i, v in enumerate(splits.values):
        if not eligible[i]:
            continue
        s = int(starts[i])
        out.append(
            Window(context_of(v, s, context), v[s : s + delta].copy(), splits.series_ids[i], s, i, v[:s])
        )
    return out


def with_holdout(splits: DataSplits, fraction: float, seed: int) -> DataSplits:
    """Hold out a random ``fraction`` of train target positions for in-sample validation."""
    sidx, starts = region_positions(splits, "train")
    n = len(sidx)
    if n == 0:
        raise EmptyRegion("no train positions to hold out")
    k = max(1, int(round(fraction * n)))
    if k >= n:
        raise EmptyRegion("hold-out would consume every train position")
    pick = np.random.default_rng(seed).choice(n, size=k, replace=False)
    held = frozenset((int(sidx[j]), int(starts[j])) for j in pick)
    return DataSplits(
        splits.values, splits.series_ids, splits.train_end, splits.val_end, splits.test_end,
        splits.horizon, held,
    )


def holdout_windows(splits: DataSplits, context: int) -> list[Window]:
    delta = splits.horizon
    out = []
    for i, s in sorted(splits.holdout):
        v = splits.values[i]
        out.append(Window(context_of(v, s, context), v[s : s + delta].copy(), splits.series_ids[i], s, i, v[:s]))
    return out
