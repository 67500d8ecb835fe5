"""Independent reference computations used by the tests.

Nothing here imports the code under test beyond plain data containers; each
oracle recomputes its quantity from first principles (loops, scipy
distributions, closed forms) so agreement is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import stats


# --------------------------------------------------------------------------
# model


def t_nll(y, mu, sigma, nu) -> float:
    return float(-stats.t.logpdf(y, df=nu, loc=mu, scale=sigma))


def gaussian_nll(y, mu, sigma) -> float:
    return 0.5 * math.log(2 * math.pi) + math.log(sigma) + (y - mu) ** 2 / (2 * sigma**2)


def reference_forward(weights, biases, head_w, head_b, x, horizon, d):
    """Scalar-loop forward pass: returns per-step (mu, sigma, nu)."""
    x = [float(v) for v in x]
    last = x[-1]
    h = [v - last for v in x]
    for k, (w, b) in enumerate(zip(weights, biases)):
        a = [sum(w[o][i] * h[i] for i in range(len(h))) + b[o] for o in range(len(b))]
        if k < len(weights) - 1:
            a = [v if v > 0 else math.expm1(v) for v in a]
        h = a
    out = []
    for t in range(horizon):
        f = h[t * d : (t + 1) * d]
        raw = [sum(head_w[j][i] * f[i] for i in range(d)) + head_b[j] for j in range(3)]
        sp = lambda z: math.log1p(math.exp(-abs(z))) + max(z, 0.0)
        out.append((raw[0] + last, sp(raw[1]) + 1e-6, 2.0 + 1e-6 + sp(raw[2])))
    return out


def central_difference(loss, arrays, h=1e-5, entries=None, rng=None, stencil=3):
    """Finite-difference gradient for selected entries of each array.

    ``stencil=5`` uses the fourth-order five-point rule, which tolerates a
    larger ``h`` and so keeps rounding noise small on tiny gradients.
    ``entries`` caps how many entries per array are probed (all when None).
    Returns a list of ``(array index, flat index, estimate)``.
    """
    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    out = []
    for a_idx, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            idx = rng.choice(flat.size, size=entries, replace=False)
        for j in idx:
            keep = flat[j]

            def at(step):
                flat[j] = keep + step
                return loss()

            if stencil == 3:
                est = (at(h) - at(-h)) / (2 * h)
            else:
                est = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h)
            flat[j] = keep
            out.append((a_idx, int(j), est))
    return out


def adam_reference(theta, grads, lr, wd=0.0, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam with decoupled decay, one gradient per step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        theta -= lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


# --------------------------------------------------------------------------
# metrics


def type7_quantile(xs, q) -> float:
    s = sorted(xs)
    h = (len(s) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def quantile_loss_loop(samples, y, q) -> float:
    total = 0.0
    for t in range(len(y)):
        qh = type7_quantile([row[t] for row in samples], q)
        total += 2 * (q * max(y[t] - qh, 0.0) + (1 - q) * max(qh - y[t], 0.0))
    return total


def crps_uniform01(y: float) -> float:
    """Closed-form CRPS of U(0,1) at y in [0,1]: y^2 - y + 1/3."""
    return y * y - y + 1.0 / 3.0


# --------------------------------------------------------------------------
# HPO


def hyperband_table_float(R, eta):
    """Bracket table from the original pseudo-code in plain floats."""
    s_max = int(math.floor(math.log(R) / math.log(eta) + 1e-12))
    B = (s_max + 1) * R
    table = {}
    for s in range(s_max, -1, -1):
        n = int(math.ceil(B / R * eta**s / (s + 1) - 1e-12))
        r = R * eta ** (-s)
        table[s] = [(int(math.floor(n * eta ** (-i) + 1e-12)), max(1, int(math.floor(r * eta**i + 1e-12)))) for i in range(s + 1)]
    return table


def nemenyi_cd(k, n, q):
    return q * math.sqrt(k * (k + 1) / (6.0 * n))


def mean_ranks(scores):
    """Average ranks per column of a tasks x methods score table, lower better, ties averaged."""
    scores = np.asarray(scores, dtype=float)
    ranks = np.zeros_like(scores)
    for t, row in enumerate(scores):
        for j, v in enumerate(row):
            less = sum(1 for w in row if w < v)
            equal = sum(1 for w in row if w == v)
            ranks[t, j] = less + (equal + 1) / 2.0
    return ranks.mean(axis=0)


# --------------------------------------------------------------------------
# fANOVA


def brute_force_fanova(levels: list[int], value) -> tuple[dict, dict, float]:
    """Marginal means by explicit enumeration of every cell.

    ``value(cell)`` takes a tuple of level indices. Returns
    ``(main shares, pairwise shares, total variance)``.
    """
    cells = list(itertools.product(*(range(n) for n in levels)))
    vals = {c: float(value(c)) for c in cells}
    mu = sum(vals.values()) / len(cells)
    total = sum((v - mu) ** 2 for v in vals.values()) / len(cells)
    k = len(levels)

    def marginal(axes, key):
        sel = [vals[c] for c in cells if all(c[a] == key[j] for j, a in enumerate(axes))]
        return sum(sel) / len(sel)

    f1 = {}
    main = {}
    for i in range(k):
        f1[i] = {a: marginal((i,), (a,)) - mu for a in range(levels[i])}
        main[i] = sum(f1[i][a] ** 2 for a in range(levels[i])) / levels[i] / total
    pair = {}
    for i, j in itertools.combinations(range(k), 2):
        acc = 0.0
        for a in range(levels[i]):
            for b in range(levels[j]):
                acc += (marginal((i, j), (a, b)) - mu - f1[i][a] - f1[j][b]) ** 2
        pair[(i, j)] = acc / (levels[i] * levels[j]) / total
    return main, pair, total


# --------------------------------------------------------------------------
# data


def least_squares_forecast(train_windows_x, train_windows_y, test_x):
    """Closed-form affine map from context to horizon (with intercept)."""
    X = np.hstack([train_windows_x, np.ones((len(train_windows_x), 1))])
    coef, *_ = np.linalg.lstsq(X, train_windows_y, rcond=None)
    return np.hstack([test_x, np.ones((len(test_x), 1))]) @ coef
