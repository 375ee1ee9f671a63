"""Reference implementations used only by the tests.

Each one takes a different route from the code it checks: enumeration,
explicit inversion, scalar loops, finite differences.
"""
import itertools
import math
from fractions import Fraction

import numpy as np


def svm_dual_enumeration(X, y, C, tol=1e-9):
    """Exact optimum of the bias-augmented L1-SVM dual by active-set enumeration.

    Every coordinate is tried at 0, at C, or free; the free block is solved
    from its stationarity equations and the partition is accepted when all
    KKT conditions hold. Returns ``(w, b, primal_objective)``.
    """
    X = np.asarray(X, float)
    ys = np.where(np.asarray(y).astype(bool), 1.0, -1.0)
    Z = np.hstack([X, np.ones((len(X), 1))]) * ys[:, None]
    Q = Z @ Z.T
    n = len(X)
    best = None
    for states in itertools.product((0, 1, 2), repeat=n):
        alpha = np.zeros(n)
        upper = [i for i, s in enumerate(states) if s == 1]
        free = [i for i, s in enumerate(states) if s == 2]
        alpha[upper] = C
        if free:
            rhs = 1.0 - Q[np.ix_(free, upper)].sum(axis=1) * C if upper else np.ones(len(free))
            sol, *_ = np.linalg.lstsq(Q[np.ix_(free, free)], rhs, rcond=None)
            alpha[free] = sol
        if np.any(alpha < -tol) or np.any(alpha > C + tol):
            continue
        g = Q @ alpha - 1.0
        ok = all(
            (s == 0 and g[i] >= -1e-7) or (s == 1 and g[i] <= 1e-7) or (s == 2 and abs(g[i]) <= 1e-7)
            for i, s in enumerate(states)
        )
        if not ok:
            continue
        wa = Z.T @ alpha
        w, b = wa[:-1], wa[-1]
        margins = ys * (X @ w + b)
        obj = 0.5 * float(wa @ wa) + C * float(np.maximum(0, 1 - margins).sum())
        if best is None or obj < best[2]:
            best = (w, b, obj)
    return best


def lda_closed_form(X, y, shrink_fraction=0.0):
    """Two-class LDA via class covariances and an explicit matrix inverse."""
    X = np.asarray(X, float)
    y = np.asarray(y).astype(bool)
    a, b = X[y], X[~y]
    n = len(X)
    pooled = ((len(a) - 1) * np.cov(a, rowvar=False) + (len(b) - 1) * np.cov(b, rowvar=False)) / max(n - 2, 1)
    pooled = np.atleast_2d(pooled)
    d = X.shape[1]
    pooled = pooled + shrink_fraction * np.trace(pooled) / d * np.eye(d)
    w = np.linalg.inv(pooled) @ (a.mean(axis=0) - b.mean(axis=0))
    mid = (a.mean(axis=0) + b.mean(axis=0)) / 2
    return lambda Z: (np.asarray(Z) - mid) @ w >= 0


def naive_counts(preds, labels):
    tp = fp = tn = fn = 0
    for p, t in zip(preds, labels):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def naive_f1(preds, labels):
    """Harmonic mean of precision and recall in exact rationals, rounded once."""
    tp, fp, tn, fn = naive_counts(preds, labels)
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    precision = Fraction(tp, tp + fp)
    recall = Fraction(tp, tp + fn)
    return float(2 * precision * recall / (precision + recall))


def naive_rate(preds, labels):
    hits = sum(1 for p, t in zip(preds, labels) if bool(p) == bool(t))
    return float(Fraction(hits, len(labels)))


def dilated_components(labels, pad):
    """Padded activation intervals via mask dilation + connected components."""
    n = len(labels)
    mask = [False] * n
    for i, v in enumerate(labels):
        if v:
            for j in range(max(0, i - pad), min(n, i + pad + 1)):
                mask[j] = True
    out, start = [], None
    for i, m in enumerate(mask + [False]):
        if m and start is None:
            start = i
        elif not m and start is not None:
            out.append((start, i - 1))
            start = None
    return out


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def lstm_single_step(params, x):
    """Softmax output of one LSTM step from zero state, with scalar loops."""
    H = params.wh.shape[1]
    D = len(x)
    pre = [[params.b[g][k] + sum(params.wx[g][k][j] * x[j] for j in range(D)) for k in range(H)] for g in range(4)]
    h = []
    for k in range(H):
        i, g, o = _sig(pre[0][k]), math.tanh(pre[2][k]), _sig(pre[3][k])
        c = i * g  # forget gate multiplies the zero initial cell
        h.append(o * math.tanh(c))
    logits = [params.by[r] + sum(params.wy[r][k] * h[k] for k in range(H)) for r in range(2)]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    return [v / sum(e) for v in e]


def finite_difference_grad(params, fn, eps=1e-5):
    """Central differences of scalar ``fn(params)`` w.r.t. every entry."""
    grads = {}
    for name in params.FIELDS:
        arr = getattr(params, name)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = fn(params)
            arr[idx] = orig - eps
            down = fn(params)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for name, num in numeric.items():
        ana = getattr(analytic, name)
        err = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        worst = max(worst, float(err.max()))
    return worst
