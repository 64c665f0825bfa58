"""Squared-error gradient-boosted regression trees with exact splits.

Trees grow level by level.  Each feature is presorted once per fit; a level
is scanned with one pass per feature over the presorted rows, accumulating
left-hand residual sums per node, so the cost per level is O(rows x features).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from ..core import LearnError


@dataclass(frozen=True)
class GbtHyperparams:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.05
    min_samples_leaf: int = 5
    row_subsample: float = 0.8
    feature_subsample: float = 0.8

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise LearnError("tree counts must be positive")
        for name in ("learning_rate", "row_subsample", "feature_subsample"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise LearnError(f"{name} must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@numba.njit(cache=True)
def _best_splits(XS, order, feats, node_of, lo, hi, node_sum, node_cnt, resid, min_leaf):
    """Best (gain, feature, threshold) for nodes ``lo..hi-1`` of the current level."""
    k = hi - lo
    best_gain = np.zeros(k)
    best_feat = np.full(k, -1, dtype=np.int64)
    best_thr = np.zeros(k)
    n = order.shape[1]
    lsum = np.zeros(k)
    lcnt = np.zeros(k, dtype=np.int64)
    last = np.zeros(k)
    for f in feats:
        lsum[:] = 0.0
        lcnt[:] = 0
        col = XS[f]
        idx = order[f]
        for t in range(n):
            r = idx[t]
            nd = node_of[r]
            if nd < lo:
                continue
            j = nd - lo
            v = col[t]
            c = lcnt[j]
            if c >= min_leaf and v > last[j] and node_cnt[j] - c >= min_leaf:
                s = lsum[j]
                rs = node_sum[j] - s
                gain = s * s / c + rs * rs / (node_cnt[j] - c) - node_sum[j] ** 2 / node_cnt[j]
                if gain > best_gain[j]:
                    best_gain[j] = gain
                    best_feat[j] = f
                    best_thr[j] = 0.5 * (last[j] + v)
                    # midpoint can round onto the upper value for adjacent floats
                    if best_thr[j] >= v:
                        best_thr[j] = last[j]
            lsum[j] += resid[r]
            lcnt[j] = c + 1
            last[j] = v
    return best_gain, best_feat, best_thr


@numba.njit(cache=True)
def _grow_tree(XT, XS, order, feats, in_sample, resid, max_depth, min_leaf, lr,
               feat_out, thr_out, left_out, right_out, value_out):
    n = XT.shape[1]
    node_of = np.full(n, -1, dtype=np.int32)
    total = 0.0
    cnt = 0
    for r in range(n):
        if in_sample[r]:
            node_of[r] = 0
            total += resid[r]
            cnt += 1
    sums = np.zeros(feat_out.shape[0])
    cnts = np.zeros(feat_out.shape[0], dtype=np.int64)
    sums[0] = total
    cnts[0] = cnt
    lo, hi, n_nodes = 0, 1, 1
    for _depth in range(max_depth):
        gain, bf, bt = _best_splits(XS, order, feats, node_of, lo, hi,
                                    sums[lo:hi], cnts[lo:hi], resid, min_leaf)
        new_lo = n_nodes
        for j in range(hi - lo):
            if bf[j] >= 0 and gain[j] > 1e-12 * (1.0 + abs(sums[lo + j]) ** 2 / cnts[lo + j]):
                nd = lo + j
                feat_out[nd] = bf[j]
                thr_out[nd] = bt[j]
                left_out[nd] = n_nodes
                right_out[nd] = n_nodes + 1
                n_nodes += 2
        if n_nodes == new_lo:
            break
        for r in range(n):
            nd = node_of[r]
            if nd < lo or feat_out[nd] < 0:
                continue
            if XT[feat_out[nd], r] <= thr_out[nd]:
                child = left_out[nd]
            else:
                child = right_out[nd]
            node_of[r] = child
            sums[child] += resid[r]
            cnts[child] += 1
        lo, hi = new_lo, n_nodes
    for nd in range(n_nodes):
        if feat_out[nd] < 0 and cnts[nd] > 0:
            value_out[nd] = lr * sums[nd] / cnts[nd]
    return n_nodes


@numba.njit(cache=True)
def _predict(X, feat, thr, left, right, value, base):
    n = X.shape[0]
    out = np.full(n, base)
    for t in range(feat.shape[0]):
        for r in range(n):
            nd = 0
            while feat[t, nd] >= 0:
                if X[r, feat[t, nd]] <= thr[t, nd]:
                    nd = left[t, nd]
                else:
                    nd = right[t, nd]
            out[r] += value[t, nd]
    return out


@dataclass
class GbtModel:
    """Fitted ensemble.  ``columns`` is the training schema; ``medians`` impute NaNs."""

    base: float
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    medians: np.ndarray
    columns: Optional[tuple[str, ...]] = None
    hyperparams: GbtHyperparams = field(default_factory=GbtHyperparams)
    seed: int = 0

    @property
    def n_features(self) -> int:
        return len(self.medians)

    def predict(self, X, columns: Optional[Sequence[str]] = None) -> np.ndarray:
        return predict(self, X, columns)


def _impute(X: np.ndarray, medians: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(X)
    if bad.any():
        X = X.copy()
        X[bad] = np.take(medians, np.nonzero(bad)[1])
    return X


def column_medians(X: np.ndarray) -> np.ndarray:
    med = np.empty(X.shape[1])
    for c in range(X.shape[1]):
        col = X[:, c]
        col = col[np.isfinite(col)]
        med[c] = np.median(col) if col.size else 0.0
    return med


def fit_gbt(X, y, hp: GbtHyperparams = GbtHyperparams(), seed: int = 0,
            columns: Optional[Sequence[str]] = None, min_rows: int = 2) -> GbtModel:
    """Fit a boosted tree ensemble; deterministic given (X, y, hp, seed)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise LearnError("X must be 2-D and row-aligned with y")
    n, F = X.shape
    if n < max(min_rows, 1):
        raise LearnError(f"too few rows to fit: {n} < {max(min_rows, 1)}")
    if not np.all(np.isfinite(y)):
        raise LearnError("targets must be finite")
    medians = column_medians(X)
    Xi = np.ascontiguousarray(_impute(X, medians))
    XT = np.ascontiguousarray(Xi.T)
    order = np.ascontiguousarray(np.argsort(XT, axis=1, kind="stable"))
    XS = np.ascontiguousarray(np.take_along_axis(XT, order, axis=1))

    rng = np.random.default_rng(seed)
    max_nodes = 2 ** (hp.max_depth + 1) - 1
    T = hp.n_trees
    feat = np.full((T, max_nodes), -1, dtype=np.int64)
    thr = np.zeros((T, max_nodes))
    left = np.full((T, max_nodes), -1, dtype=np.int64)
    right = np.full((T, max_nodes), -1, dtype=np.int64)
    value = np.zeros((T, max_nodes))

    base = float(np.mean(y))
    pred = np.full(n, base)
    n_rows = max(1, int(round(hp.row_subsample * n)))
    n_feats = max(1, int(round(hp.feature_subsample * F))) if F else 0
    for t in range(T):
        resid = y - pred
        if n_rows < n:
            in_sample = np.zeros(n, dtype=np.bool_)
            in_sample[rng.choice(n, n_rows, replace=False)] = True
        else:
            in_sample = np.ones(n, dtype=np.bool_)
        if n_feats < F:
            feats = np.sort(rng.choice(F, n_feats, replace=False)).astype(np.int64)
        else:
            feats = np.arange(F, dtype=np.int64)
        _grow_tree(XT, XS, order, feats, in_sample, resid, hp.max_depth, hp.min_samples_leaf,
                   hp.learning_rate, feat[t], thr[t], left[t], right[t], value[t])
        pred += _predict(Xi, feat[t:t + 1], thr[t:t + 1], left[t:t + 1], right[t:t + 1],
                         value[t:t + 1], 0.0)
    return GbtModel(base, feat, thr, left, right, value, medians,
                    tuple(columns) if columns is not None else None, hp, seed)


def predict(model: GbtModel, X, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Predictions for the rows of ``X``; the schema must match the training one."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == 0:
        return np.empty(0)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise LearnError(f"expected {model.n_features} feature columns, got {X.shape}")
    if columns is not None and model.columns is not None and tuple(columns) != model.columns:
        raise LearnError("feature columns do not match the training schema")
    if len(X) == 0:
        return np.empty(0)
    Xi = np.ascontiguousarray(_impute(X, model.medians))
    return _predict(Xi, model.feat, model.thr, model.left, model.right, model.value, model.base)


def r2_score(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    ss = float(np.sum((y - y.mean()) ** 2))
    res = float(np.sum((y - pred) ** 2))
    return 1.0 - res / ss if ss > 0 else (1.0 if res == 0 else -math.inf)
