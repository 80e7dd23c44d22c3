"""Gradient-boosted regression trees fitted to the pinball (quantile) loss.

Boosting starts from the empirical alpha-quantile of the targets. Each stage
grows a depth-limited tree by greedy variance reduction on the pinball
subgradient, then refits every leaf to ``learning_rate`` times the empirical
alpha-quantile of the residuals falling into it. Trees are stored as
complete binary trees in heap layout (children of node ``k`` are ``2k+1`` and
``2k+2``); a feature index of ``-1`` marks a leaf and ``-2`` an unused slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

_GAIN_TOL = 1e-9
_CEIL_TOL = 1e-9


def pinball_loss(y, y_hat, alpha: float):
    """Quantile loss ``alpha*(y-y_hat)`` if ``y > y_hat`` else ``(1-alpha)*(y_hat-y)``.

    Works elementwise on arrays; returns a float for scalar inputs.
    """
    diff = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    out = np.where(diff > 0, alpha * diff, (alpha - 1.0) * diff)
    return float(out) if out.ndim == 0 else out


def empirical_quantile(values, alpha: float) -> float:
    """Smallest sample value ``v`` whose empirical CDF reaches ``alpha``.

    This order statistic minimises the mean pinball loss over the sample.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empirical quantile of an empty sample")
    k = math.ceil(alpha * v.size - _CEIL_TOL)
    return float(v[min(max(k, 1), v.size) - 1])


@njit(cache=True)
def _quantile_sorted(v, alpha):
    n = v.shape[0]
    k = math.ceil(alpha * n - _CEIL_TOL)
    if k < 1:
        k = 1
    if k > n:
        k = n
    return v[k - 1]


@njit(cache=True)
def _mean_pinball(y, f, alpha):
    total = 0.0
    for i in range(y.shape[0]):
        d = y[i] - f[i]
        if d > 0:
            total += alpha * d
        else:
            total += (alpha - 1.0) * d
    return total / y.shape[0]


@njit(cache=True)
def _boost(X, y, order, alpha, base, n_trees, max_depth, learning_rate, min_leaf):
    n, d = X.shape
    n_nodes = 2 ** (max_depth + 1) - 1
    feats = np.full((n_trees, n_nodes), -2, dtype=np.int64)
    thrs = np.zeros((n_trees, n_nodes))
    vals = np.zeros((n_trees, n_nodes))

    f_cur = np.full(n, base)
    loss = _mean_pinball(y, f_cur, alpha)
    grad = np.empty(n)
    node_of = np.empty(n, dtype=np.int64)
    cnt = np.zeros(n_nodes, dtype=np.int64)
    tot = np.zeros(n_nodes)
    cnt_l = np.zeros(n_nodes, dtype=np.int64)
    sum_l = np.zeros(n_nodes)
    last_v = np.zeros(n_nodes)
    best_gain = np.zeros(n_nodes)
    best_feat = np.zeros(n_nodes, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    resid = np.empty(n)
    f_new = np.empty(n)

    n_used = 0
    for t in range(n_trees):
        for i in range(n):
            r = y[i] - f_cur[i]
            resid[i] = r
            if r > 0:
                grad[i] = alpha
            elif r < 0:
                grad[i] = alpha - 1.0
            else:
                grad[i] = alpha - 0.5
            node_of[i] = 0
        feat_t = feats[t]
        feat_t[0] = -1

        for depth in range(max_depth):
            first = 2 ** depth - 1
            last = 2 ** (depth + 1) - 2
            for k in range(first, last + 1):
                cnt[k] = 0
                tot[k] = 0.0
                cnt_l[k] = 0
                sum_l[k] = 0.0
                best_gain[k] = _GAIN_TOL
                best_feat[k] = -1
            for i in range(n):
                k = node_of[i]
                if k >= first:
                    cnt[k] += 1
                    tot[k] += grad[i]
            any_open = False
            for k in range(first, last + 1):
                if feat_t[k] == -1 and cnt[k] >= 2 * min_leaf:
                    any_open = True
            if not any_open:
                break

            for f in range(d):
                for k in range(first, last + 1):
                    cnt_l[k] = 0
                    sum_l[k] = 0.0
                for p in range(n):
                    i = order[p, f]
                    k = node_of[i]
                    if k < first:
                        continue
                    xv = X[i, f]
                    nl = cnt_l[k]
                    nr = cnt[k] - nl
                    if nl >= min_leaf and nr >= min_leaf and xv > last_v[k]:
                        sl = sum_l[k]
                        sr = tot[k] - sl
                        gain = sl * sl / nl + sr * sr / nr - tot[k] * tot[k] / cnt[k]
                        if gain > best_gain[k] + _GAIN_TOL:
                            best_gain[k] = gain
                            best_feat[k] = f
                            thr = last_v[k] + 0.5 * (xv - last_v[k])
                            if thr >= xv:
                                thr = last_v[k]
                            best_thr[k] = thr
                    cnt_l[k] = nl + 1
                    sum_l[k] += grad[i]
                    last_v[k] = xv

            split_any = False
            for k in range(first, last + 1):
                if best_feat[k] >= 0:
                    feat_t[k] = best_feat[k]
                    thrs[t, k] = best_thr[k]
                    feat_t[2 * k + 1] = -1
                    feat_t[2 * k + 2] = -1
                    split_any = True
            if not split_any:
                break
            for i in range(n):
                k = node_of[i]
                if k >= first and feat_t[k] >= 0:
                    if X[i, feat_t[k]] <= thrs[t, k]:
                        node_of[i] = 2 * k + 1
                    else:
                        node_of[i] = 2 * k + 2

        # leaf refit on the true loss
        idx = np.argsort(node_of, kind="mergesort")
        p = 0
        changed = False
        while p < n:
            k = node_of[idx[p]]
            q = p
            while q < n and node_of[idx[q]] == k:
                q += 1
            seg = np.empty(q - p)
            for s in range(p, q):
                seg[s - p] = resid[idx[s]]
            seg.sort()
            v = learning_rate * _quantile_sorted(seg, alpha)
            vals[t, k] = v
            if v != 0.0:
                changed = True
            p = q
        if not changed:
            feats[t, :] = -2
            break
        for i in range(n):
            f_new[i] = f_cur[i] + vals[t, node_of[i]]
        new_loss = _mean_pinball(y, f_new, alpha)
        if new_loss > loss:
            feats[t, :] = -2
            break
        loss = new_loss
        for i in range(n):
            f_cur[i] = f_new[i]
        n_used = t + 1

    return feats[:n_used].copy(), thrs[:n_used].copy(), vals[:n_used].copy()


@njit(cache=True)
def _predict(X, base, feats, thrs, vals):
    n = X.shape[0]
    out = np.full(n, base)
    for i in range(n):
        acc = base
        for t in range(feats.shape[0]):
            k = 0
            while feats[t, k] >= 0:
                if X[i, feats[t, k]] <= thrs[t, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            acc += vals[t, k]
        out[i] = acc
    return out


@dataclass(frozen=True)
class GbmParams:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    # the learner is fully deterministic; the seed is carried for provenance only
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


class QuantileModel:
    """A fitted boosted-tree model of the conditional ``alpha``-quantile."""

    def __init__(self, alpha, base_prediction, features, thresholds, values, n_features):
        self.alpha = alpha
        self.base_prediction = base_prediction
        self.features = features
        self.thresholds = thresholds
        self.values = values
        self.n_features = n_features

    @property
    def n_trees(self) -> int:
        return self.features.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = _predict(np.ascontiguousarray(X), self.base_prediction,
                       self.features, self.thresholds, self.values)
        return out[0] if single else out

    def __repr__(self):
        return f"QuantileModel(alpha={self.alpha}, n_trees={self.n_trees})"


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {alpha}")


def fit(X, y, alpha: float, params: GbmParams = GbmParams()) -> QuantileModel:
    """Fit one quantile model on feature matrix ``X`` and targets ``y``."""
    _check_alpha(alpha)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has shape {y.shape}")
    if y.size == 0:
        raise ValueError("cannot fit on an empty dataset")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValueError("features and targets must be finite")

    base = empirical_quantile(y, alpha)
    X = np.ascontiguousarray(X)
    if params.n_trees == 0 or X.shape[1] == 0:
        n_nodes = 2 ** (params.max_depth + 1) - 1
        empty = np.zeros((0, n_nodes))
        return QuantileModel(alpha, base, empty.astype(np.int64), empty, empty, X.shape[1])
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    feats, thrs, vals = _boost(X, y, order, float(alpha), base, params.n_trees,
                               params.max_depth, float(params.learning_rate),
                               params.min_samples_leaf)
    return QuantileModel(alpha, base, feats, thrs, vals, X.shape[1])


def predict(model: QuantileModel, x) -> np.ndarray:
    return model.predict(x)
