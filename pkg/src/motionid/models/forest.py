"""CART trees with Gini splits and bootstrap random forests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class DecisionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    Samples with ``x[feature] <= threshold`` go left. ``value`` holds the class
    distribution of each node's training samples.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=float))]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


def best_split(X: np.ndarray, y: np.ndarray, n_classes: int, features, min_samples_leaf: int):
    """Lowest weighted Gini impurity over ``features`` and midpoint thresholds.

    Returns ``(feature, threshold, impurity)`` or ``None`` when no threshold
    leaves at least ``min_samples_leaf`` samples on both sides. Ties keep the
    earliest feature in ``features`` and the smallest threshold.
    """
    n = len(y)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    n_left = np.arange(1, n)
    n_right = n - n_left
    size_ok = (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    best = None
    for f in features:
        xs = X[:, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        valid = size_ok & (xs[1:] > xs[:-1])
        if not valid.any():
            continue
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = total - left
        # n * weighted Gini = (n_l - sum l^2 / n_l) + (n_r - sum r^2 / n_r)
        score = (n_left - (left * left).sum(axis=1) / n_left
                 + n_right - (right * right).sum(axis=1) / n_right) / n
        score = np.where(valid, score, np.inf)
        # equal splits can differ by rounding in the last bits; treat them as ties
        i = int(np.flatnonzero(score <= score.min() + 1e-12)[0])
        if best is None or score[i] < best[2] - 1e-12:
            thr = 0.5 * (xs[i] + xs[i + 1])
            if thr >= xs[i + 1]:  # adjacent floats: the midpoint rounds up to the larger value
                thr = xs[i]
            best = (int(f), float(thr), float(score[i]))
    return best


def tree_fit(X: np.ndarray, y: np.ndarray, n_classes: int, min_samples_leaf: int = 1,
             max_features: int | None = None, rng: np.random.Generator | None = None) -> DecisionTree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n_features = X.shape[1]
    k = n_features if max_features is None else max(1, min(int(max_features), n_features))
    if rng is None:
        rng = np.random.default_rng(0)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        n = len(idx)
        if n < 2 * min_samples_leaf or np.count_nonzero(value[node]) <= 1:
            continue
        feats = np.arange(n_features) if k == n_features else np.sort(
            rng.choice(n_features, k, replace=False))
        split = best_split(X[idx], y[idx], n_classes, feats, min_samples_leaf)
        if split is None:
            continue
        f, thr, _ = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(value))


def sqrt_features(n_features: int) -> int:
    return int(math.ceil(math.sqrt(n_features)))


def _fit_one(X, y, n_classes, min_samples_leaf, max_features, seed, index):
    rng = np.random.default_rng([seed, index])
    boot = rng.integers(0, len(y), len(y))
    return tree_fit(X[boot], y[boot], n_classes, min_samples_leaf, max_features, rng)


def forest_fit(X, y, n_classes: int, n_estimators: int, min_samples_leaf: int, seed: int,
               n_jobs: int = 1) -> list[DecisionTree]:
    """One tree per bootstrap resample; tree ``i`` draws from the stream ``[seed, i]``,
    so the forest does not depend on ``n_jobs``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    mf = sqrt_features(X.shape[1])
    if n_jobs == 1:
        return [_fit_one(X, y, n_classes, min_samples_leaf, mf, seed, i) for i in range(n_estimators)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(
        delayed(_fit_one)(X, y, n_classes, min_samples_leaf, mf, seed, i) for i in range(n_estimators)
    )


def forest_predict_proba(trees: list[DecisionTree], X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    total = np.zeros((len(X), trees[0].value.shape[1]))
    for tree in trees:
        total += tree.predict_proba(X)
    return total / len(trees)
