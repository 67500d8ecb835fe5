"""Forecast accuracy metrics and their dataset-level aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllTargetsZero, ConstantInsample

QUANTILES = tuple(round(k / 10, 1) for k in range(1, 10))
POINT_KEYS = ("mase", "mse", "mae", "rmse", "nrmse", "nd", "mape")


def _qkey(prefix, q):
    return f"{prefix}_{q:.1f}"


METRIC_KEYS = (
    POINT_KEYS
    + tuple(_qkey("ql", q) for q in QUANTILES)
    + tuple(_qkey("wql", q) for q in QUANTILES)
    + ("crps", "nll")
)


def seasonal_error(insample, m: int) -> float:
    """Mean absolute in-sample seasonal-naive error."""
    insample = np.asarray(insample, dtype=float)
    if len(insample) <= m:
        raise ValueError(f"in-sample length {len(insample)} must exceed seasonality {m}")
    return float(np.mean(np.abs(insample[m:] - insample[:-m])))


def seasonal_naive(insample, m: int, horizon: int) -> np.ndarray:
    insample = np.asarray(insample, dtype=float)
    m = min(m, len(insample))
    last = insample[-m:]
    return last[np.arange(horizon) % m]


def mase(y, yhat, insample, m: int = 1, mode: str = "monash", return_skipped: bool = False):
    """Mean absolute scaled error.

    ``monash`` divides the mean absolute error by the in-sample seasonal-naive
    error; ``pointwise`` scales each point by the error of the seasonal-naive
    continuation at that point, skipping (and counting) zero denominators.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size < 1:
        raise ValueError("y and yhat must be non-empty and of equal length")
    err = np.abs(y - yhat)
    skipped = 0
    if mode == "monash":
        denom = seasonal_error(insample, m)
        if denom == 0.0:
            raise ConstantInsample("in-sample seasonal differences are all zero")
        value = float(err.mean() / denom)
    elif mode == "pointwise":
        naive = np.abs(y - seasonal_naive(insample, m, len(y)))
        ok = naive > 0
        skipped = int((~ok).sum())
        value = float(np.mean(err[ok] / naive[ok])) if ok.any() else math.nan
    else:
        raise ValueError(f"unknown MASE mode {mode!r}")
    return (value, skipped) if return_skipped else value


def point_metrics(y, yhat) -> dict:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size < 1:
        raise ValueError("y and yhat must be non-empty and of equal length")
    abs_y = np.abs(y)
    if not abs_y.any():
        raise AllTargetsZero("nd, nrmse and mape are undefined when every target is zero")
    err = y - yhat
    mse = float(np.mean(err**2))
    mae = float(np.mean(np.abs(err)))
    rmse = math.sqrt(mse)
    nz = abs_y > 0
    return {
        "mse": mse,
        "mae": mae,
        "rmse": rmse,
        "nd": float(np.abs(err).sum() / abs_y.sum()),
        "nrmse": rmse / float(abs_y.mean()),
        "mape": float(np.mean(np.abs(err[nz]) / abs_y[nz])),
        "mape_skipped": int((~nz).sum()),
    }


def empirical_quantiles(samples, quantiles=QUANTILES) -> np.ndarray:
    """Type-7 (linear interpolation) quantiles per timestep, shape ``(len(q), horizon)``."""
    return np.quantile(np.asarray(samples, dtype=float), quantiles, axis=0, method="linear")


def quantile_losses(samples, y, quantiles=QUANTILES) -> np.ndarray:
    """Unweighted quantile loss per level, summed over timesteps."""
    y = np.asarray(y, dtype=float)
    qhat = empirical_quantiles(samples, quantiles)
    q = np.asarray(quantiles)[:, None]
    diff = y[None, :] - qhat
    return 2.0 * np.sum(np.maximum(q * diff, (q - 1.0) * diff), axis=1)


def quantile_metrics(samples, y) -> dict:
    y = np.asarray(y, dtype=float)
    ql = quantile_losses(samples, y)
    denom = float(np.abs(y).sum())
    if denom == 0.0:
        raise AllTargetsZero("weighted quantile loss is undefined when every target is zero")
    wql = ql / denom
    return {
        "quantile_loss": dict(zip(QUANTILES, map(float, ql))),
        "weighted_quantile_loss": dict(zip(QUANTILES, map(float, wql))),
        "crps_proxy": float(np.mean(wql)),
    }


@dataclass
class MetricReport:
    """Metric values plus the pooled sums needed to aggregate them."""

    mase: float = math.nan
    mse: float = math.nan
    mae: float = math.nan
    rmse: float = math.nan
    nrmse: float = math.nan
    nd: float = math.nan
    mape: float = math.nan
    quantile_loss: dict = field(default_factory=dict)
    weighted_quantile_loss: dict = field(default_factory=dict)
    crps_proxy: float = math.nan
    nll: float = math.nan
    # pooled accumulators
    n_windows: int = 0
    n_points: int = 0
    sum_abs_target: float = 0.0
    sum_abs_error: float = 0.0
    sum_sq_error: float = 0.0
    ql_sum: dict = field(default_factory=dict)
    nll_sum: float = 0.0
    mase_sum: float = 0.0
    mase_windows: int = 0
    mape_sum: float = 0.0
    mape_windows: int = 0
    mape_skipped: int = 0

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in POINT_KEYS}
        for q in QUANTILES:
            out[_qkey("ql", q)] = self.quantile_loss.get(q, math.nan)
        for q in QUANTILES:
            out[_qkey("wql", q)] = self.weighted_quantile_loss.get(q, math.nan)
        out["crps"] = self.crps_proxy
        out["nll"] = self.nll
        return out


def _finish(r: MetricReport) -> MetricReport:
    n = r.n_points
    r.mse = r.sum_sq_error / n
    r.mae = r.sum_abs_error / n
    r.rmse = math.sqrt(r.mse)
    r.quantile_loss = dict(r.ql_sum)
    if r.sum_abs_target > 0:
        r.nd = r.sum_abs_error / r.sum_abs_target
        r.nrmse = r.rmse / (r.sum_abs_target / n)
        r.weighted_quantile_loss = {q: v / r.sum_abs_target for q, v in r.ql_sum.items()}
        r.crps_proxy = float(np.mean(list(r.weighted_quantile_loss.values())))
    else:
        r.nd = r.nrmse = r.crps_proxy = math.nan
        r.weighted_quantile_loss = {q: math.nan for q in r.ql_sum}
    r.mase = r.mase_sum / r.mase_windows if r.mase_windows else math.nan
    r.mape = r.mape_sum / r.mape_windows if r.mape_windows else math.nan
    r.nll = r.nll_sum / n if not math.isnan(r.nll_sum) else math.nan
    return r


def window_report(
    y,
    samples,
    insample=None,
    m: int = 1,
    point=None,
    nll_terms=None,
    mase_mode: str = "monash",
) -> MetricReport:
    """Score one forecast window. Never raises on degenerate targets: undefined
    ratios are left out of the per-window averages and pooled sums still count."""
    y = np.asarray(y, dtype=float)
    samples = np.asarray(samples, dtype=float)
    yhat = np.median(samples, axis=0) if point is None else np.asarray(point, dtype=float)
    err = y - yhat
    abs_y = np.abs(y)
    r = MetricReport(
        n_windows=1,
        n_points=y.size,
        sum_abs_target=float(abs_y.sum()),
        sum_abs_error=float(np.abs(err).sum()),
        sum_sq_error=float((err**2).sum()),
        ql_sum=dict(zip(QUANTILES, map(float, quantile_losses(samples, y)))),
        nll_sum=float(np.sum(nll_terms)) if nll_terms is not None else math.nan,
    )
    if insample is not None:
        try:
            v = mase(y, yhat, insample, m, mode=mase_mode)
            if math.isfinite(v):
                r.mase_sum, r.mase_windows = v, 1
        except (ConstantInsample, ValueError):
            pass
    nz = abs_y > 0
    if nz.any():
        r.mape_sum = float(np.mean(np.abs(err[nz]) / abs_y[nz]))
        r.mape_windows = 1
    r.mape_skipped = int((~nz).sum())
    return _finish(r)


# how window scores become dataset scores; stored with every metastore
AGGREGATION = {
    "mase": "mean over windows",
    "mape": "mean over windows",
    "other": "pooled over all forecast points",
}


def aggregate_reports(reports) -> MetricReport:
    """Pool window reports: MASE and MAPE are averaged per window, everything
    else is recomputed from pooled numerators and denominators."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    out = MetricReport(ql_sum={q: 0.0 for q in QUANTILES})
    # fsum is correctly rounded, so pooling does not depend on report order
    total = math.fsum

    out.n_windows = sum(r.n_windows for r in reports)
    out.n_points = sum(r.n_points for r in reports)
    out.sum_abs_target = total(r.sum_abs_target for r in reports)
    out.sum_abs_error = total(r.sum_abs_error for r in reports)
    out.sum_sq_error = total(r.sum_sq_error for r in reports)
    out.ql_sum = {q: total(r.ql_sum.get(q, 0.0) for r in reports) for q in QUANTILES}
    out.nll_sum = total(r.nll_sum for r in reports)
    out.mase_sum = total(r.mase_sum for r in reports)
    out.mase_windows = sum(r.mase_windows for r in reports)
    out.mape_sum = total(r.mape_sum for r in reports)
    out.mape_windows = sum(r.mape_windows for r in reports)
    out.mape_skipped = sum(r.mape_skipped for r in reports)
    return _finish(out)
