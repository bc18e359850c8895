"""Learner specifications and the shared estimator base class."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_binary, check_feature_dim, check_matrix, check_vector
from ..exceptions import ConfigError

IDENTITY = "identity"
LOGIT = "logit"
LINKS = (IDENTITY, LOGIT)

# Logit-link predictions are clamped to (EPS_LINK, 1 - EPS_LINK).
EPS_LINK = 1e-12

KINDS = (
    "glm_main_effects",
    "glm_pairwise_interactions",
    "ridge_poly2",
    "boosted_stumps",
    "random_forest",
)

_HYPERPARAMETERS = {
    "glm_main_effects": {},
    "glm_pairwise_interactions": {},
    "ridge_poly2": {"penalty": 1.0},
    "boosted_stumps": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 2, "min_samples_leaf": 5},
    "random_forest": {"n_trees": 100, "min_samples_leaf": 5, "max_features": 1.0},
}


def clamp_probability(p):
    return np.clip(p, EPS_LINK, 1.0 - EPS_LINK)


@dataclass(frozen=True)
class LearnerSpec:
    """Which learner to build and with what hyperparameters.

    ``hyperparameters`` overrides the per-kind defaults; unknown names are
    rejected.
    """

    kind: str
    hyperparameters: dict = field(default_factory=dict)
    link: str = IDENTITY

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}", field="kind")
        if self.link not in LINKS:
            raise ConfigError(f"unknown link {self.link!r}", field="link")
        allowed = _HYPERPARAMETERS[self.kind]
        unknown = set(self.hyperparameters) - set(allowed)
        if unknown:
            raise ConfigError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}", field="hyperparameters")
        hp = {**allowed, **self.hyperparameters}
        if hp.get("penalty", 0.0) < 0:
            raise ConfigError("ridge penalty must be >= 0", field="penalty")
        if "learning_rate" in hp and not 0 < hp["learning_rate"] <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]", field="learning_rate")
        for name in ("n_rounds", "max_depth", "n_trees", "min_samples_leaf"):
            if name in hp and (int(hp[name]) != hp[name] or hp[name] < 1):
                raise ConfigError(f"{name} must be a positive integer", field=name)
        object.__setattr__(self, "hyperparameters", hp)

    def with_link(self, link):
        return LearnerSpec(self.kind, dict(self.hyperparameters), link)

    def to_dict(self):
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters), "link": self.link}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        extra = set(d) - {"kind", "hyperparameters", "link"}
        if extra:
            raise ConfigError(f"unknown learner keys {sorted(extra)}", field="library")
        if "kind" not in d:
            raise ConfigError("learner entry needs a 'kind'", field="library")
        return cls(d["kind"], dict(d.get("hyperparameters", {})), d.get("link", IDENTITY))


class BaseLearner(RegressorMixin, BaseEstimator):
    """Common fit/predict plumbing.

    Subclasses implement ``_fit(X, y)`` and ``_predict_raw(X)``; the latter
    returns the linear predictor for the logit link and the mean otherwise.
    """

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_vector(y, length=X.shape[0])
        if self.link == LOGIT:
            check_binary(y)
        elif self.link != IDENTITY:
            raise ConfigError(f"unknown link {self.link!r}", field="link")
        self.n_features_in_ = X.shape[1]
        self.constant_ = None
        if self.link == LOGIT and np.unique(y).size < 2:
            # a single class has no finite MLE; predict the clamped rate
            self.constant_ = float(y[0])
            return self
        self._fit(X, y)
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_feature_dim(X, self.n_features_in_)
        if self.constant_ is not None:
            return clamp_probability(np.full(X.shape[0], self.constant_))
        raw = self._predict_raw(X)
        if self.link == LOGIT:
            return clamp_probability(expit(raw))
        return raw

    def to_dict(self):
        check_is_fitted(self, "n_features_in_")
        return {
            "class": type(self).__name__,
            "params": self.get_params(),
            "feature_dim": self.n_features_in_,
            "state": {"constant": self.constant_} if self.constant_ is not None else self._state(),
        }

    def _state(self):
        return {}
