"""scikit-learn style front end for the full two-stage pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .crossfit import (
    CATE,
    NuisanceConfig,
    build_pseudo_outcomes,
    fit_nuisances,
    partition_cohort,
)
from .data import CONTINUOUS, Cohort
from .smoother import LocalLinearRegression


class NestedTrialCATE(BaseEstimator):
    """Conditional average treatment effect in the target population.

    Fits cross-fitted nuisance models on a nested-trial cohort, forms
    doubly robust pseudo-outcomes and smooths them against the effect
    modifier with a local linear kernel regression.

    Parameters
    ----------
    effect_modifier : int
        Column of ``X`` holding the effect modifier V.
    outcome_kind : {"continuous", "binary"}
    library : list of LearnerSpec, optional
        Super learner library for every nuisance model. Defaults to all
        five built-in learners.
    n_folds : int
        Number of cross-fitting folds.
    clip_epsilon : float
        Probabilities are clipped to ``[clip_epsilon, 1 - clip_epsilon]``.
    treatment_probability : float or "fit"
        Known randomisation probability, or ``"fit"`` to estimate it.
    sl_folds : int
        Folds used inside each super learner.
    bandwidth : float or "cv"
    bandwidth_grid : array-like, optional
    cv_folds : int
    cv_interior : float
        Tail fraction of V excluded from the bandwidth CV loss.
    random_state : int
    n_jobs : int
        Processes used to fit the cross-fitting folds. Results do not
        depend on this value.

    Attributes
    ----------
    cohort_ : Cohort
    folds_ : FoldAssignment
    nuisance_ : NuisanceFits
    pseudo_outcomes_ : PseudoOutcomes
    smoother_ : LocalLinearRegression
    bandwidth_ : float

    Examples
    --------
    >>> from catgen.learners import LearnerSpec
    >>> from catgen.simulation import DgpSpec, generate_cohort
    >>> c = generate_cohort(DgpSpec("continuous", n=400, n_s1_target=200), seed=1)
    >>> est = NestedTrialCATE(effect_modifier=1, library=[LearnerSpec("glm_main_effects")])
    >>> est.fit(c.covariates, c.s, c.a, c.y).predict([0.0]).shape
    (1,)
    """

    def __init__(self, effect_modifier=0, outcome_kind=CONTINUOUS, library=None, n_folds=5, clip_epsilon=0.01,
                 treatment_probability=0.5, sl_folds=5, bandwidth="cv", bandwidth_grid=None, cv_folds=5,
                 cv_interior=0.05, random_state=0, n_jobs=1):
        self.effect_modifier = effect_modifier
        self.outcome_kind = outcome_kind
        self.library = library
        self.n_folds = n_folds
        self.clip_epsilon = clip_epsilon
        self.treatment_probability = treatment_probability
        self.sl_folds = sl_folds
        self.bandwidth = bandwidth
        self.bandwidth_grid = bandwidth_grid
        self.cv_folds = cv_folds
        self.cv_interior = cv_interior
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _nuisance_config(self):
        kwargs = {}
        if self.library is not None:
            kwargs["library"] = list(self.library)
        return NuisanceConfig(
            n_folds=self.n_folds,
            clip_epsilon=self.clip_epsilon,
            treatment_probability=self.treatment_probability,
            sl_folds=self.sl_folds,
            **kwargs,
        )

    def fit(self, X, s, a=None, y=None):
        """Fit on covariates ``X`` for every unit and (a, y) for trial units.

        ``a`` and ``y`` may hold anything (conventionally NaN) where
        ``s == 0``; those entries are ignored.
        """
        X = np.asarray(X, dtype=float)
        s = np.asarray(s, dtype=float).ravel()
        n = s.size
        a = np.full(n, np.nan) if a is None else np.asarray(a, dtype=float).ravel()
        y = np.full(n, np.nan) if y is None else np.asarray(y, dtype=float).ravel()
        if a.size == n and y.size == n:
            a = np.where(s == 1, a, np.nan)
            y = np.where(s == 1, y, np.nan)
        cohort = Cohort(X, s, a, y, effect_modifier_index=self.effect_modifier, outcome_kind=self.outcome_kind)
        return self.fit_cohort(cohort)

    def fit_cohort(self, cohort):
        """Fit directly on a :class:`~catgen.data.Cohort`."""
        cohort.check_estimable()
        config = self._nuisance_config()
        seed = int(self.random_state)
        self.cohort_ = cohort
        self.folds_ = partition_cohort(cohort, L=config.n_folds, seed=seed, stratified=config.stratified)
        self.nuisance_ = fit_nuisances(cohort, self.folds_, config, seed=seed, n_jobs=self.n_jobs)
        self.pseudo_outcomes_ = build_pseudo_outcomes(cohort, self.nuisance_, arm=CATE)
        self.smoother_ = LocalLinearRegression(
            bandwidth=self.bandwidth,
            bandwidth_grid=self.bandwidth_grid,
            cv_folds=self.cv_folds,
            cv_interior=self.cv_interior,
            random_state=seed,
        ).fit(self.pseudo_outcomes_.v, self.pseudo_outcomes_.xi)
        self.bandwidth_ = self.smoother_.bandwidth_
        return self

    def predict(self, v):
        """Estimated CATE at effect-modifier values ``v``."""
        check_is_fitted(self, "smoother_")
        return self.smoother_.predict(v)

    def curve(self, grid):
        """:class:`~catgen.smoother.CateCurve` with pointwise 95% intervals."""
        check_is_fitted(self, "smoother_")
        return self.smoother_.curve(grid)
