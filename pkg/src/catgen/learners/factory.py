"""Build learners from :class:`LearnerSpec` records."""

import json
import zlib

import numpy as np

from .base import LearnerSpec
from .boosting import BoostedTrees
from .forest import RandomForest
from .glm import GLMMainEffects, GLMPairwise, RidgePoly2


def make_learner(spec, random_state=None):
    hp = spec.hyperparameters
    if spec.kind == "glm_main_effects":
        return GLMMainEffects(link=spec.link)
    if spec.kind == "glm_pairwise_interactions":
        return GLMPairwise(link=spec.link)
    if spec.kind == "ridge_poly2":
        return RidgePoly2(link=spec.link, penalty=hp["penalty"])
    if spec.kind == "boosted_stumps":
        return BoostedTrees(
            link=spec.link,
            n_rounds=hp["n_rounds"],
            learning_rate=hp["learning_rate"],
            max_depth=hp["max_depth"],
            min_samples_leaf=hp["min_samples_leaf"],
        )
    return RandomForest(
        link=spec.link,
        n_trees=hp["n_trees"],
        min_samples_leaf=hp["min_samples_leaf"],
        max_features=hp["max_features"],
        random_state=random_state,
    )


def spec_seed(spec, seed):
    """Seed for one member that depends on the spec, not its library position."""
    tag = zlib.crc32(json.dumps(spec.to_dict(), sort_keys=True).encode())
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def fit_learner(features, targets, spec, seed=0):
    """Fit a single learner described by ``spec``."""
    return make_learner(spec, random_state=spec_seed(spec, seed)).fit(features, targets)
