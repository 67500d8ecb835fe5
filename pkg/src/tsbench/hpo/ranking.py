"""Friedman ranking and Nemenyi critical difference across tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, f as f_dist, rankdata, studentized_range

from .. import jsonio

# Nemenyi q_alpha = studentized range quantile / sqrt(2), k = 2..10 (Demsar 2006)
Q_ALPHA = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}


def nemenyi_q(k: int, alpha: float) -> float:
    table = Q_ALPHA.get(round(alpha, 4))
    if table is not None and 2 <= k <= len(table) + 1:
        return table[k - 2]
    return float(studentized_range.ppf(1 - alpha, k, np.inf) / math.sqrt(2))


def critical_difference(k: int, n_tasks: int, alpha: float = 0.05) -> float:
    return nemenyi_q(k, alpha) * math.sqrt(k * (k + 1) / (6.0 * n_tasks))


@dataclass
class CDReport:
    methods: list[str]
    tasks: list[str]
    ranks: np.ndarray  # (n_tasks, k)
    mean_ranks: dict
    friedman_chi2: float
    friedman_p: float
    iman_davenport_f: float
    iman_davenport_p: float
    cd: float
    alpha: float
    groups: list[list[str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "tasks": self.tasks,
            "mean_ranks": self.mean_ranks,
            "ranks": self.ranks.tolist(),
            "friedman_chi2": self.friedman_chi2,
            "friedman_p": self.friedman_p,
            "iman_davenport_f": self.iman_davenport_f,
            "iman_davenport_p": self.iman_davenport_p,
            "cd": self.cd,
            "alpha": self.alpha,
            "groups": self.groups,
        }

    def to_json(self) -> str:
        return jsonio.dumps(self.to_dict())

    def plot_rows(self) -> list[dict]:
        """Rows for the CD plot-data CSV: each method with its CD bar endpoints."""
        return [
            {
                "method": m,
                "mean_rank": r,
                "cd": self.cd,
                "cd_low": r - self.cd / 2,
                "cd_high": r + self.cd / 2,
            }
            for m, r in sorted(self.mean_ranks.items(), key=lambda kv: kv[1])
        ]


def rank_and_cd(results: dict, alpha: float = 0.05) -> CDReport:
    """``results[task][method]`` is a final objective (lower is better)."""
    tasks = sorted(results)
    if len(tasks) < 2:
        raise ValueError("need at least two tasks")
    methods = sorted({m for t in tasks for m in results[t]})
    k, n = len(methods), len(tasks)
    if k < 2:
        raise ValueError("need at least two methods")
    scores = np.array([[results[t][m] for m in methods] for t in tasks], dtype=float)
    scores = np.where(np.isnan(scores), np.inf, scores)
    ranks = np.vstack([rankdata(row, method="average") for row in scores])
    mean = ranks.mean(axis=0)
    chi = 12.0 * n / (k * (k + 1)) * (np.sum(mean**2) - k * (k + 1) ** 2 / 4.0)
    chi_p = float(chi2.sf(chi, k - 1))
    denom = n * (k - 1) - chi
    if denom > 0:
        ff = (n - 1) * chi / denom
        ff_p = float(f_dist.sf(ff, k - 1, (k - 1) * (n - 1)))
    else:
        ff, ff_p = math.inf, 0.0
    cd = critical_difference(k, n, alpha)
    order = np.argsort(mean, kind="stable")
    groups, last_end = [], -1
    for a in range(k):
        b = a
        while b + 1 < k and mean[order[b + 1]] - mean[order[a]] < cd:
            b += 1
        if b > a and b > last_end:
            groups.append([methods[order[j]] for j in range(a, b + 1)])
            last_end = b
    return CDReport(
        methods=methods,
        tasks=tasks,
        ranks=ranks,
        mean_ranks={m: float(r) for m, r in zip(methods, mean)},
        friedman_chi2=float(chi),
        friedman_p=chi_p,
        iman_davenport_f=float(ff),
        iman_davenport_p=ff_p,
        cd=cd,
        alpha=alpha,
        groups=groups,
    )
