"""Random forest learner backed by scikit-learn's regression forest.

For the logit link the forest regresses the 0/1 target directly, so leaf
means are class frequencies; predictions are clamped away from 0 and 1.
"""

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .base import LOGIT, BaseLearner


class RandomForest(BaseLearner):
    def __init__(self, link="identity", n_trees=100, min_samples_leaf=5, max_features=1.0, random_state=None):
        self.link = link
        self.n_trees = n_trees
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.random_state = random_state

    def _fit(self, X, y):
        self.forest_ = RandomForestRegressor(
            n_estimators=self.n_trees,
            min_samples_leaf=self.min_samples_leaf,
            max_features=self.max_features,
            random_state=self.random_state,
            n_jobs=1,
        ).fit(X, y)
        return self

    def _predict_raw(self, X):
        pred = self.forest_.predict(X)
        if self.link == LOGIT:
            p = np.clip(pred, 1e-12, 1 - 1e-12)
            return np.log(p / (1 - p))
        return pred

    def _state(self):
        trees = []
        for est in self.forest_.estimators_:
            t = est.tree_
            trees.append(
                {
                    "left": t.children_left.tolist(),
                    "right": t.children_right.tolist(),
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "value": t.value.ravel().tolist(),
                }
            )
        return {"trees": trees}
