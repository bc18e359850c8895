import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from catgen.exceptions import FitError, InputError
from catgen.learners import LearnerSpec, SuperLearner, fit_super_learner, project_simplex, solve_simplex_weights

# an overwhelming ridge penalty shrinks every slope to zero, leaving the
# free intercept: a constant-only GLM
CONSTANT_ONLY = LearnerSpec("ridge_poly2", {"penalty": 1e12})


class _Fixed:
    """Stand-in member with a fixed output, for ensemble arithmetic checks."""

    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


def _ensemble(weights, values, link="identity"):
    sl = SuperLearner([], link=link)
    sl.weights_ = np.asarray(weights, dtype=float)
    sl.members_ = [_Fixed(v) for v in values]
    sl.n_features_in_ = 1
    return sl


def test_simplex_k1():
    np.testing.assert_array_equal(solve_simplex_weights(np.ones((5, 1)), np.arange(5.0)), [1.0])


def test_exact_column_dominates():
    rng = np.random.default_rng(0)
    t = rng.normal(size=300)
    P = np.column_stack([t, rng.normal(size=300)])
    assert solve_simplex_weights(P, t)[0] >= 0.999


def test_random_problem_matches_grid_search():
    rng = np.random.default_rng(7)
    P = rng.normal(size=(200, 3))
    t = P @ [0.2, 0.5, 0.3] + rng.normal(size=200)
    w = solve_simplex_weights(P, t)
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-10
    obj = np.sum((P @ w - t) ** 2)
    best, _ = oracles.simplex_grid_search(P, t, 0.005)
    assert obj <= best + 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 3))
def test_simplex_objective_is_near_optimal(seed, K):
    rng = np.random.default_rng(seed)
    n = 40
    P = rng.normal(size=(n, K))
    t = rng.normal(size=n)
    w = solve_simplex_weights(P, t)
    best, _ = oracles.simplex_grid_search(P, t, 0.01)
    assert np.sum((P @ w - t) ** 2) <= best + 1e-8 * n
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-10


def test_identical_columns_split_equally():
    rng = np.random.default_rng(1)
    col = rng.normal(size=100)
    P = np.column_stack([col, col])
    w = solve_simplex_weights(P, col + 0.1 * rng.normal(size=100))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)
    best, _ = oracles.simplex_grid_search(P, col, 0.01)
    assert np.sum((P @ w - col) ** 2) <= best + 1e-8


def test_projection_lands_on_simplex():
    w = project_simplex(np.array([3.0, -1.0, 0.5]))
    np.testing.assert_allclose(w, [1.0, 0.0, 0.0])
    w = project_simplex(np.array([0.2, 0.2, 0.2]))
    np.testing.assert_allclose(w, [1 / 3] * 3)


def test_linear_member_dominates_constant_member():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 2))
    y = 1 + 2 * X[:, 0] - X[:, 1]
    sl = fit_super_learner(X, y, [CONSTANT_ONLY, LearnerSpec("glm_main_effects")], seed=0)
    assert sl.weights_[1] >= 0.99
    np.testing.assert_allclose(sl.members_[0].predict(X), y.mean(), atol=1e-6)


def test_zero_risk_member_gets_weight_above_099():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    y = 0.5 + X @ [1.0, -2.0]
    sl = fit_super_learner(X, y, [LearnerSpec("boosted_stumps", {"n_rounds": 5}), LearnerSpec("glm_main_effects")],
                           seed=0)
    assert sl.weights_[1] >= 0.99


def test_single_member_weight_one(small_cohort):
    sl = fit_super_learner(small_cohort.covariates, small_cohort.covariates[:, 0], [LearnerSpec("ridge_poly2")])
    np.testing.assert_array_equal(sl.weights_, [1.0])


def test_vertex_weights_reproduce_member():
    sl = _ensemble([1.0, 0.0], [1.0, 3.0])
    np.testing.assert_allclose(sl.predict(np.zeros((4, 1))), 1.0, atol=1e-12)


def test_convex_combination_of_members():
    sl = _ensemble([0.5, 0.5], [1.0, 3.0])
    np.testing.assert_allclose(sl.predict(np.zeros((4, 1))), 2.0)


def test_ensemble_risk_not_worse_than_best_member():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 3))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 + rng.normal(size=300)
    lib = [LearnerSpec("glm_main_effects"), LearnerSpec("ridge_poly2"), LearnerSpec("boosted_stumps")]
    sl = fit_super_learner(X, y, lib, seed=5)
    ens_risk = np.mean((sl.cv_predictions_ @ sl.weights_ - y) ** 2)
    assert ens_risk <= sl.cv_risk_.min() + 1e-8


def test_library_permutation_permutes_weights():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    y = X[:, 0] + X[:, 1] * X[:, 2] + rng.normal(size=200)
    lib = [LearnerSpec("glm_main_effects"), LearnerSpec("glm_pairwise_interactions"), LearnerSpec("ridge_poly2")]
    a = fit_super_learner(X, y, lib, seed=3).weights_
    b = fit_super_learner(X, y, lib[::-1], seed=3).weights_
    np.testing.assert_allclose(a, b[::-1], atol=1e-9)


def test_determinism():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(150, 3)), rng.normal(size=150)
    lib = [LearnerSpec("glm_main_effects"), LearnerSpec("random_forest", {"n_trees": 10})]
    a = fit_super_learner(X, y, lib, seed=8)
    b = fit_super_learner(X, y, lib, seed=8)
    np.testing.assert_array_equal(a.weights_, b.weights_)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_failing_member_gets_zero_weight(monkeypatch):
    from catgen.learners import super_learner as mod

    original = mod.make_learner

    def make(spec, random_state=None):
        if spec.kind == "random_forest":
            raise FitError("boom")
        return original(spec, random_state)

    monkeypatch.setattr(mod, "make_learner", make)
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 2))
    y = X[:, 0] + rng.normal(size=60)
    lib = [LearnerSpec("glm_main_effects"), LearnerSpec("random_forest")]
    with pytest.warns(RuntimeWarning, match="weight set to 0"):
        sl = SuperLearner(lib, random_state=0).fit(X, y)
    np.testing.assert_array_equal(sl.weights_, [1.0, 0.0])
    assert sl.members_[1] is None


def test_all_members_failing_is_fatal(monkeypatch):
    from catgen.learners import super_learner as mod

    def broken(spec, random_state=None):
        class Boom:
            def fit(self, *a):
                raise FitError("boom")

        return Boom()

    monkeypatch.setattr(mod, "make_learner", broken)
    with pytest.raises(FitError, match="every library member failed"):
        SuperLearner([LearnerSpec("glm_main_effects")], random_state=0).fit(np.zeros((20, 1)), np.zeros(20))


def test_too_few_rows_for_folds():
    with pytest.raises(InputError):
        SuperLearner([LearnerSpec("glm_main_effects")], k_folds=5).fit(np.zeros((9, 1)), np.zeros(9))


def test_ensemble_serialises(small_cohort):
    sl = fit_super_learner(small_cohort.covariates, small_cohort.s, [LearnerSpec("glm_main_effects")], link="logit")
    d = sl.to_dict()
    assert d["weights"] == [1.0] and d["members"][0]["spec"]["link"] == "logit"
