"""Generalised linear models fitted by iteratively reweighted least squares."""

import warnings
from itertools import combinations

import numpy as np
from scipy.special import expit

from .base import IDENTITY, LOGIT, BaseLearner

JITTER = 1e-8


def pairwise_features(X, squares=False):
    """Append products x_j * x_k (j < k), and x_j**2 if ``squares``."""
    cols = [X]
    pairs = list(combinations(range(X.shape[1]), 2))
    if pairs:
        cols.append(np.column_stack([X[:, j] * X[:, k] for j, k in pairs]))
    if squares:
        cols.append(X**2)
    return np.hstack(cols)


def _solve(A, b):
    """Solve A x = b, adding ridge jitter if A is singular."""
    try:
        if np.linalg.cond(A) < 1e12:
            return np.linalg.solve(A, b), False
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER * max(1.0, np.trace(A) / A.shape[0])
    return np.linalg.lstsq(A + jitter * np.eye(A.shape[0]), b, rcond=None)[0], True


def fit_irls(Z, y, link, penalty=0.0, max_iter=100, tol=1e-10):
    """Fit a (penalised) GLM on design ``Z`` whose first column is the intercept.

    The penalty ``penalty * ||beta[1:]||^2 / 2`` leaves the intercept free.
    Returns ``(beta, n_iter, jittered)``.
    """
    n, k = Z.shape
    mask = np.ones(k)
    mask[0] = 0.0
    P = penalty * np.diag(mask)
    jittered = False
    if link == IDENTITY:
        beta, jittered = _solve(Z.T @ Z + P, Z.T @ y)
        return beta, 1, jittered

    ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    beta = np.zeros(k)
    beta[0] = np.log(ybar / (1 - ybar))
    dev_old = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = Z @ beta
        mu = np.clip(expit(eta), 1e-15, 1 - 1e-15)
        w = mu * (1 - mu)
        z = eta + (y - mu) / w
        A = Z.T @ (w[:, None] * Z) + P
        beta_new, flag = _solve(A, Z.T @ (w * z))
        jittered |= flag
        mu_new = np.clip(expit(Z @ beta_new), 1e-15, 1 - 1e-15)
        dev = -2 * np.sum(y * np.log(mu_new) + (1 - y) * np.log(1 - mu_new)) + penalty * np.sum((mask * beta_new) ** 2)
        beta = beta_new
        if abs(dev_old - dev) <= tol * (abs(dev) + tol):
            break
        dev_old = dev
    return beta, n_iter, jittered


class _GLMBase(BaseLearner):
    _squares = False
    _pairs = False

    def _design(self, X):
        F = pairwise_features(X, squares=self._squares) if self._pairs else X
        # constant columns are absorbed by the intercept
        F = F[:, self.keep_]
        return np.column_stack([np.ones(F.shape[0]), (F - self.center_) / self.scale_])

    def _fit(self, X, y):
        F = pairwise_features(X, squares=self._squares) if self._pairs else X
        scale = F.std(axis=0)
        self.keep_ = scale > 0
        self.center_ = F[:, self.keep_].mean(axis=0)
        self.scale_ = scale[self.keep_]
        Z = self._design(X)
        penalty = getattr(self, "penalty", 0.0)
        if Z.shape[0] < Z.shape[1] and penalty == 0.0:
            warnings.warn("fewer rows than parameters; using ridge fallback", RuntimeWarning, stacklevel=3)
            penalty = JITTER
        beta, self.n_iter_, jittered = fit_irls(Z, y, self.link, penalty=penalty)
        if jittered:
            warnings.warn("singular normal equations; applied ridge jitter", RuntimeWarning, stacklevel=3)
        self.coef_ = beta
        return self

    def _predict_raw(self, X):
        return self._design(X) @ self.coef_

    def _state(self):
        return {"coef": self.coef_.tolist(), "keep": self.keep_.tolist(), "center": self.center_.tolist(), "scale": self.scale_.tolist()}


class GLMMainEffects(_GLMBase):
    """Linear (identity link) or logistic (logit link) regression on X."""

    def __init__(self, link=IDENTITY):
        self.link = link


class GLMPairwise(_GLMBase):
    """GLM on main effects plus all pairwise products."""

    _pairs = True

    def __init__(self, link=IDENTITY):
        self.link = link


class RidgePoly2(_GLMBase):
    """Ridge-penalised GLM on a full degree-2 polynomial expansion.

    Features are standardised before penalising, so ``penalty`` is on the
    scale of standardised coefficients.
    """

    _pairs = True
    _squares = True

    def __init__(self, link=IDENTITY, penalty=1.0):
        self.link = link
        self.penalty = penalty
