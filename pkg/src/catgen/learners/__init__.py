"""First-stage learners and the convex stacking ensemble."""

from .base import EPS_LINK, IDENTITY, KINDS, LOGIT, LearnerSpec
from .boosting import BoostedTrees
from .factory import fit_learner, make_learner
from .forest import RandomForest
from .glm import GLMMainEffects, GLMPairwise, RidgePoly2
from .super_learner import SuperLearner, fit_super_learner, project_simplex, solve_simplex_weights


def predict(model, features):
    """Predict with a fitted learner or ensemble."""
    return model.predict(features)


def default_library():
    return [LearnerSpec(kind) for kind in KINDS]


__all__ = [
    "EPS_LINK",
    "IDENTITY",
    "KINDS",
    "LOGIT",
    "BoostedTrees",
    "GLMMainEffects",
    "GLMPairwise",
    "LearnerSpec",
    "RandomForest",
    "RidgePoly2",
    "SuperLearner",
    "default_library",
    "fit_learner",
    "fit_super_learner",
    "make_learner",
    "predict",
    "project_simplex",
    "solve_simplex_weights",
]
