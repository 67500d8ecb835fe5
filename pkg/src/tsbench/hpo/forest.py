"""Small regression random forest compiled with numba.

Surrogate fits happen once per BO iteration on at most a few dozen points;
at that size the fixed per-call overhead of a general-purpose forest
dominates, so trees are grown here with plain CART on variance reduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True)
def _grow(X, y, rows, max_depth, min_split, n_try, feat, thr, left, right, value):
    n_feat = X.shape[1]
    n = rows.shape[0]
    cap = feat.shape[0]
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    order_feats = np.arange(n_feat)
    buf = np.empty(n, np.int64)
    sp = 0
    st_node[0], st_lo[0], st_hi[0], st_depth[0] = 0, 0, n, 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, lo, hi, depth = st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp]
        m = hi - lo
        total = 0.0
        total_sq = 0.0
        for k in range(lo, hi):
            v = y[rows[k]]
            total += v
            total_sq += v * v
        value[node] = total / m
        feat[node] = -1
        if depth >= max_depth or m < min_split:
            continue
        if total_sq - total * total / m <= 1e-12 * max(1.0, total_sq):
            continue
        if n_try < n_feat:
            for k in range(n_try):
                j = k + np.random.randint(n_feat - k)
                tmp = order_feats[k]
                order_feats[k] = order_feats[j]
                order_feats[j] = tmp
        best_gain = 1e-12
        best_f = -1
        best_t = 0.0
        base = total * total / m
        vals = np.empty(m)
        order = np.empty(m, np.int64)
        for fi in range(n_try):
            f = order_feats[fi]
            # insertion sort: nodes hold at most a few dozen rows
            for k in range(m):
                v = X[rows[lo + k], f]
                j = k
                while j > 0 and vals[j - 1] > v:
                    vals[j] = vals[j - 1]
                    order[j] = order[j - 1]
                    j -= 1
                vals[j] = v
                order[j] = k
            left_sum = 0.0
            for k in range(m - 1):
                left_sum += y[rows[lo + order[k]]]
                a = vals[k]
                b = vals[k + 1]
                if b <= a:
                    continue
                nl = k + 1
                nr = m - nl
                right_sum = total - left_sum
                gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (a + b)
        if best_f < 0:
            continue
        # stable partition of rows[lo:hi]
        nl = 0
        for k in range(lo, hi):
            if X[rows[k], best_f] <= best_t:
                buf[nl] = rows[k]
                nl += 1
        nr = 0
        for k in range(lo, hi):
            if X[rows[k], best_f] > best_t:
                buf[nl + nr] = rows[k]
                nr += 1
        for k in range(m):
            rows[lo + k] = buf[k]
        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = best_t
        left[node] = l_id
        right[node] = r_id
        st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp] = l_id, lo, lo + nl, depth + 1
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp], st_depth[sp] = r_id, lo + nl, hi, depth + 1
        sp += 1
    return n_nodes


@njit(cache=True)
def _fit(X, y, n_trees, max_depth, min_split, n_try, bootstrap, seed):
    np.random.seed(seed)
    n = X.shape[0]
    cap = 2 * n + 1
    feat = np.full((n_trees, cap), -1, np.int64)
    thr = np.zeros((n_trees, cap))
    left = np.full((n_trees, cap), -1, np.int64)
    right = np.full((n_trees, cap), -1, np.int64)
    value = np.zeros((n_trees, cap))
    for t in range(n_trees):
        rows = np.empty(n, np.int64)
        for k in range(n):
            rows[k] = np.random.randint(n) if bootstrap else k
        _grow(X, y, rows, max_depth, min_split, n_try, feat[t], thr[t], left[t], right[t], value[t])
    return feat, thr, left, right, value


@njit(cache=True)
def _predict(X, feat, thr, left, right, value):
    n_trees = feat.shape[0]
    out = np.empty((n_trees, X.shape[0]))
    for t in range(n_trees):
        for i in range(X.shape[0]):
            node = 0
            while feat[t, node] >= 0:
                if X[i, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[t, i] = value[t, node]
    return out


@dataclass
class RandomForest:
    n_trees: int = 50
    max_depth: int = 12
    min_samples_split: int = 2
    max_features: float = 1.0
    bootstrap: bool = True

    def fit(self, X, y, seed: int) -> "RandomForest":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        n_try = max(1, int(round(self.max_features * X.shape[1])))
        self._trees = _fit(X, y, self.n_trees, self.max_depth, self.min_samples_split, n_try, self.bootstrap, int(seed))
        return self

    def predict_trees(self, X) -> np.ndarray:
        """Per-tree predictions, shape ``(n_trees, n_points)``."""
        return _predict(np.ascontiguousarray(X, dtype=np.float64), *self._trees)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance across trees."""
        p = self.predict_trees(X)
        return p.mean(axis=0), p.var(axis=0)
