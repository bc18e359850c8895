"""Cross-validated convex stacking (super learner)."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_binary, check_feature_dim, check_matrix, check_vector
from ..exceptions import FitError, InputError
from .base import IDENTITY, LOGIT, LearnerSpec, clamp_probability
from .factory import make_learner, spec_seed


def project_simplex(w):
    """Euclidean projection onto {w >= 0, sum(w) = 1} (sort-based)."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, w.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(w - css[rho] / (rho + 1.0), 0.0)


def solve_simplex_weights(cv_predictions, targets, tol=1e-10, max_iter=10_000):
    """Minimise ``||P w - t||^2`` over the probability simplex.

    Accelerated projected gradient started at equal weights; members with
    identical columns therefore keep identical weights.
    """
    P = check_matrix(cv_predictions, "cv_predictions")
    t = check_vector(targets, "targets", length=P.shape[0])
    K = P.shape[1]
    if K == 1:
        return np.ones(1)
    n = P.shape[0]
    Q = P.T @ P / n
    c = P.T @ t / n
    L = 2.0 * np.linalg.eigvalsh(Q)[-1]
    if L <= 0:
        return np.full(K, 1.0 / K)
    step = 1.0 / L
    w = np.full(K, 1.0 / K)
    z, mom = w.copy(), 1.0
    for _ in range(max_iter):
        w_new = project_simplex(z - step * 2.0 * (Q @ z - c))
        mom_new = 0.5 * (1 + np.sqrt(1 + 4 * mom * mom))
        z = w_new + ((mom - 1) / mom_new) * (w_new - w)
        done = np.max(np.abs(w_new - w)) < tol
        w, mom = w_new, mom_new
        if done:
            break
    w = np.maximum(w, 0.0)
    return w / w.sum()


def _kfold(n, k, seed):
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=int)
    fold[rng.permutation(n)] = np.arange(n) % k
    return fold


class SuperLearner(RegressorMixin, BaseEstimator):
    """Convex combination of library members chosen by K-fold CV risk.

    Parameters
    ----------
    library : list of LearnerSpec
    link : {"identity", "logit"}
        Overrides each member's link. Weights minimise squared error on the
        response (probability) scale for both links.
    k_folds : int
    random_state : int or None

    Attributes
    ----------
    weights_ : ndarray of shape (K,)
    members_ : list of fitted learners (``None`` for failed members)
    cv_predictions_ : ndarray of shape (n, K)
    cv_risk_ : ndarray of shape (K,)
    """

    def __init__(self, library, link=IDENTITY, k_folds=5, random_state=None):
        self.library = library
        self.link = link
        self.k_folds = k_folds
        self.random_state = random_state

    def _specs(self):
        return [s if isinstance(s, LearnerSpec) else LearnerSpec.from_dict(s) for s in self.library]

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_vector(y, length=X.shape[0])
        if self.link == LOGIT:
            check_binary(y)
        specs = [s.with_link(self.link) for s in self._specs()]
        if not specs:
            raise InputError("library must contain at least one learner")
        n, K = X.shape[0], len(specs)
        if self.k_folds < 2 or n < 2 * self.k_folds:
            raise InputError(f"need k_folds >= 2 and n >= 2*k_folds (n={n}, k_folds={self.k_folds})")
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1)[0])
        seeds = [spec_seed(spec, seed) for spec in specs]
        fold = _kfold(n, self.k_folds, seed)
        cv = np.full((n, K), np.nan)
        ok = np.ones(K, dtype=bool)
        for k, spec in enumerate(specs):
            try:
                for f in range(self.k_folds):
                    train, test = fold != f, fold == f
                    model = make_learner(spec, random_state=seeds[k])
                    if self.link == LOGIT and np.unique(y[train]).size < 2:
                        # nothing to discriminate: predict the (clamped) training rate
                        cv[test, k] = clamp_probability(np.full(test.sum(), y[train].mean()))
                        continue
                    cv[test, k] = model.fit(X[train], y[train]).predict(X[test])
                if not np.all(np.isfinite(cv[:, k])):
                    raise FitError("non-finite cross-validated predictions")
            except Exception as exc:  # noqa: BLE001 - a failing member is dropped, not fatal
                warnings.warn(f"library member {spec.kind} failed ({exc}); weight set to 0", RuntimeWarning)
                ok[k] = False
        if not ok.any():
            raise FitError("every library member failed")
        weights = np.zeros(K)
        weights[ok] = solve_simplex_weights(cv[:, ok], y)
        members = []
        for k, spec in enumerate(specs):
            if not ok[k]:
                members.append(None)
                continue
            try:
                members.append(make_learner(spec, random_state=seeds[k]).fit(X, y))
            except Exception as exc:  # noqa: BLE001
                raise FitError(f"refit of {spec.kind} on full data failed: {exc}") from exc
        self.specs_ = specs
        self.members_ = members
        self.weights_ = weights
        self.cv_predictions_ = cv
        self.cv_risk_ = np.array([np.mean((cv[:, k] - y) ** 2) if ok[k] else np.inf for k in range(K)])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_feature_dim(X, self.n_features_in_)
        out = np.zeros(X.shape[0])
        for w, m in zip(self.weights_, self.members_):
            if w > 0:
                out += w * m.predict(X)
        if self.link == LOGIT:
            out = clamp_probability(out)
        return out

    def to_dict(self):
        check_is_fitted(self, "weights_")
        return {
            "class": "SuperLearner",
            "link": self.link,
            "weights": self.weights_.tolist(),
            "cv_risk": [None if not np.isfinite(r) else float(r) for r in self.cv_risk_],
            "members": [
                {"spec": s.to_dict(), "model": None if m is None else m.to_dict()}
                for s, m in zip(self.specs_, self.members_)
            ],
        }


def fit_super_learner(features, targets, library, k_folds=5, seed=None, link=IDENTITY):
    return SuperLearner(library, link=link, k_folds=k_folds, random_state=seed).fit(features, targets)
