"""PNG renderings of the report's plot-data tables.

Each function takes the same rows that are written to CSV, so a figure can
always be regenerated from the delimited output alone. Figures are built on
``matplotlib.figure.Figure`` directly, which keeps pyplot's global state and
any display backend out of the picture.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

WIDTH = 6.0
GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _figure(width: float = WIDTH, height: float | None = None) -> tuple[Figure, object]:
    fig = Figure(figsize=(width, height or width * GOLDEN), facecolor="w")
    ax = fig.add_subplot(1, 1, 1)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def learning_curves(rows: list[dict], path, group: str = "strategy", value: str = "val_nll") -> Path:
    """Mean curve per ``group`` level; rows carry ``epoch``, ``group`` and ``value``."""
    by = defaultdict(lambda: defaultdict(list))
    for r in rows:
        v = r.get(value)
        if v is not None and math.isfinite(v):
            by[str(r[group])][int(r["epoch"])].append(v)
    fig, ax = _figure()
    for level in sorted(by):
        epochs = sorted(by[level])
        ax.plot(epochs, [np.mean(by[level][e]) for e in epochs], label=level, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel(value)
    if by:
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def context_scatter(rows: list[dict], path, value: str = "test.mase") -> Path:
    """Final metric against context length, one colour per shape."""
    fig, ax = _figure()
    shapes = sorted({r["shape"] for r in rows})
    contexts = sorted({r["context"] for r in rows})
    pos = {c: k for k, c in enumerate(contexts)}
    rng = np.random.default_rng(0)
    for k, shape in enumerate(shapes):
        pts = [(pos[r["context"]], r[value]) for r in rows if r["shape"] == shape and _finite(r.get(value))]
        if not pts:
            continue
        x = np.array([p[0] for p in pts], dtype=float)
        x += (k - (len(shapes) - 1) / 2) * 0.08 + rng.uniform(-0.02, 0.02, len(x))
        ax.scatter(x, [p[1] for p in pts], s=8, alpha=0.6, label=shape)
    ax.set_xticks(range(len(contexts)))
    ax.set_xticklabels([str(c) for c in contexts])
    ax.set_xlabel("context length")
    ax.set_ylabel(value)
    if shapes:
        ax.legend(frameon=False, fontsize=8, markerscale=2)
    return _save(fig, path)


def importance_bars(rows: list[dict], path, title: str = "") -> Path:
    """Horizontal bars from ``(factor, importance)`` rows."""
    fig, ax = _figure(height=max(2.0, 0.3 * len(rows) + 1.0))
    names = [r["factor"] for r in rows][::-1]
    vals = [r["importance"] for r in rows][::-1]
    ax.barh(range(len(names)), vals, color="0.35")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlim(0, max(1e-12, max(vals, default=0.0)) * 1.05)
    ax.set_xlabel("importance")
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)


def cd_diagram(rows: list[dict], path, groups: list[list[str]] | None = None) -> Path:
    """Mean ranks on a shared axis with the critical-difference bar.

    ``rows`` come from ``CDReport.plot_rows``; ``groups`` are drawn as
    horizontal bars joining methods that are not significantly different.
    """
    rows = sorted(rows, key=lambda r: r["mean_rank"])
    k = len(rows)
    cd = rows[0]["cd"] if rows else 0.0
    fig, ax = _figure(height=1.2 + 0.25 * k)
    ax.set_xlim(0.5, max(k, 1 + cd) + 0.5)
    ax.set_ylim(-1.0 - 0.3 * len(groups or []), k + 1.0)
    ax.invert_xaxis()
    ax.spines["left"].set_visible(False)
    ax.set_yticks([])
    ax.set_xlabel("mean rank")
    for j, r in enumerate(rows):
        y = k - j
        ax.plot([r["mean_rank"]] * 2, [0, y], color="k", lw=0.8)
        ax.text(r["mean_rank"], y, f" {r['method']} ({r['mean_rank']:.2f})", va="center", fontsize=8)
    ax.plot([1, 1 + cd], [k + 0.6] * 2, color="k", lw=2)
    ax.text(1 + cd / 2, k + 0.75, f"CD = {cd:.3f}", ha="center", fontsize=8)
    ranks = {r["method"]: r["mean_rank"] for r in rows}
    for g, members in enumerate(groups or []):
        xs = [ranks[m] for m in members if m in ranks]
        if xs:
            ax.plot([min(xs), max(xs)], [-0.5 - 0.3 * g] * 2, color="tab:red", lw=3)
    return _save(fig, path)


def _finite(v) -> bool:
    return v is not None and isinstance(v, (int, float)) and math.isfinite(v)
