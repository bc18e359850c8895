"""Gradient boosting with shallow regression trees, written from scratch.

Squared-error boosting for the identity link; Newton-step boosting on the
log-odds scale for the logit link.
"""

import numpy as np
from scipy.special import expit

from .base import IDENTITY, LOGIT, BaseLearner


def _best_split(X, grad, hess, min_leaf):
    """Exhaustive best split of one node, maximising the second-order gain.

    Returns ``(feature, threshold, gain)`` or ``None`` when no split is
    allowed.
    """
    n, p = X.shape
    if n < 2 * min_leaf:
        return None
    G, H = grad.sum(), hess.sum()
    parent = G * G / H
    best = None
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        gl = np.cumsum(grad[order])[:-1]
        hl = np.cumsum(hess[order])[:-1]
        # split between positions i and i+1, left has i+1 points
        valid = xs[1:] > xs[:-1]
        left_n = np.arange(1, n)
        valid &= (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not valid.any():
            continue
        hr = H - hl
        gain = np.where(valid, gl * gl / hl + (G - gl) ** 2 / hr - parent, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > 1e-12 and (best is None or gain[i] > best[2]):
            best = (j, 0.5 * (xs[i] + xs[i + 1]), float(gain[i]))
    return best


class _Tree:
    """Array-backed binary tree; leaves have ``feature == -1``."""

    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _add(self, feature=-1, threshold=0.0, value=0.0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def grow(self, X, grad, hess, max_depth, min_leaf):
        self._grow(X, grad, hess, np.arange(X.shape[0]), 0, max_depth, min_leaf)
        self._freeze()
        return self

    def _grow(self, X, grad, hess, idx, depth, max_depth, min_leaf):
        value = grad[idx].sum() / hess[idx].sum()
        split = _best_split(X[idx], grad[idx], hess[idx], min_leaf) if depth < max_depth else None
        if split is None:
            return self._add(value=value)
        j, thr, _ = split
        node = self._add(feature=j, threshold=thr, value=value)
        go_left = X[idx, j] <= thr
        self.left[node] = self._grow(X, grad, hess, idx[go_left], depth + 1, max_depth, min_leaf)
        self.right[node] = self._grow(X, grad, hess, idx[~go_left], depth + 1, max_depth, min_leaf)
        return node

    def _freeze(self):
        self.feature = np.asarray(self.feature, dtype=int)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=int)
        self.right = np.asarray(self.right, dtype=int)
        self.value = np.asarray(self.value, dtype=float)

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            f = self.feature[node[active]]
            go_left = X[active, f] <= self.threshold[node[active]]
            node[active] = np.where(go_left, self.left[node[active]], self.right[node[active]])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }


class BoostedTrees(BaseLearner):
    """Gradient-boosted depth-limited trees.

    Parameters
    ----------
    link : {"identity", "logit"}
    n_rounds : int
    learning_rate : float in (0, 1]
    max_depth : int
        Depth 1 gives stumps.
    min_samples_leaf : int
    """

    def __init__(self, link=IDENTITY, n_rounds=100, learning_rate=0.1, max_depth=2, min_samples_leaf=5):
        self.link = link
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def _fit(self, X, y):
        if self.link == LOGIT:
            ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
            self.init_ = float(np.log(ybar / (1 - ybar)))
        else:
            self.init_ = float(y.mean())
        f = np.full(y.shape[0], self.init_)
        ones = np.ones_like(y)
        self.trees_ = []
        for _ in range(self.n_rounds):
            if self.link == LOGIT:
                p = expit(f)
                grad, hess = y - p, np.maximum(p * (1 - p), 1e-12)
            else:
                grad, hess = y - f, ones
            tree = _Tree().grow(X, grad, hess, self.max_depth, self.min_samples_leaf)
            f = f + self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
        return self

    def _predict_raw(self, X):
        f = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            f += self.learning_rate * tree.predict(X)
        return f

    def _state(self):
        return {"init": self.init_, "trees": [t.to_dict() for t in self.trees_]}
