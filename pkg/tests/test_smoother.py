import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

import oracles
from catgen.exceptions import BandwidthError, DegenerateWindowError, InputError
from catgen.smoother import (
    EPANECHNIKOV,
    BandwidthSpec,
    LocalLinearRegression,
    _cv_folds,
    cv_scores,
    default_bandwidth_grid,
    kernel_eval,
    kernel_weights,
    local_linear_fit,
    sandwich_variance,
    select_bandwidth_cv,
    smoothing_bias_reference,
)

# ------------------------------------------------------------------ kernel


@pytest.mark.parametrize("u, k", [(0.0, 0.75), (0.5, 0.5625), (1.0, 0.0), (-1.0, 0.0), (1.2, 0.0), (-3.0, 0.0)])
def test_kernel_values(u, k):
    assert kernel_eval(u) == pytest.approx(k, abs=1e-15)


def test_kernel_moments_by_quadrature():
    assert oracles.trapezoid(kernel_eval, -1, 1, 1e-5) == pytest.approx(1.0, abs=1e-6)
    assert oracles.trapezoid(lambda u: u * u * kernel_eval(u), -1, 1, 1e-5) == pytest.approx(
        EPANECHNIKOV.second_moment, abs=1e-6)
    assert oracles.trapezoid(lambda u: kernel_eval(u) ** 2, -1, 1, 1e-5) == pytest.approx(
        EPANECHNIKOV.roughness, abs=1e-6)


def test_scaled_weights():
    np.testing.assert_allclose(kernel_weights(np.array([0.0, 0.25, 1.0]), 0.0, 0.5), [1.5, 1.125, 0.0])


def test_bias_reference():
    assert smoothing_bias_reference(2.0, 0.4) == pytest.approx(2.0 * 0.08 * 0.2, abs=1e-15)


# --------------------------------------------------------- local linear fit


def test_three_point_example():
    v, xi = np.array([0.0, 0.5, 1.0]), np.array([1.0, 2.0, 0.0])
    theta, slope = local_linear_fit(v, xi, 0.5, 2.0)
    ot, os_ = oracles.weighted_line(v, xi, 0.5, 2.0)
    assert theta == pytest.approx(ot, abs=1e-12) and slope == pytest.approx(os_, abs=1e-12)
    # symmetric weights around 0.5: theta is the weighted mean, slope the end-point difference
    w = np.array([0.75 * (1 - 0.0625), 0.75, 0.75 * (1 - 0.0625)])
    assert theta == pytest.approx((w @ xi) / w.sum(), abs=1e-12)
    assert slope == pytest.approx(-1.0, abs=1e-12)


def test_single_point_window_is_degenerate():
    with pytest.raises(DegenerateWindowError):
        local_linear_fit(np.array([0.0, 0.5, 1.0]), np.array([1.0, 2.0, 0.0]), 0.5, 0.4)


def test_tied_v_window_is_degenerate():
    with pytest.raises(DegenerateWindowError):
        local_linear_fit(np.array([0.0, 0.0, 5.0]), np.array([1.0, 2.0, 0.0]), 0.0, 1.0)


def test_non_positive_bandwidth_rejected():
    with pytest.raises(InputError):
        local_linear_fit(np.zeros(3), np.zeros(3), 0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.2, 3.0), st.floats(-1.0, 1.0))
def test_fit_matches_weighted_least_squares_oracle(seed, h, v0):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-2, 2, 60)
    xi = np.sin(v) + rng.normal(size=60)
    if np.count_nonzero(np.abs(v - v0) < h) < 3:
        return
    theta, slope = local_linear_fit(v, xi, v0, h)
    ot, os_ = oracles.weighted_line(v, xi, v0, h)
    assert theta == pytest.approx(ot, abs=1e-9) and slope == pytest.approx(os_, abs=1e-9)


@pytest.mark.parametrize("h", [0.05, 0.3, 1.0, 10.0])
def test_lines_are_reproduced_exactly(h):
    rng = np.random.default_rng(1)
    v = rng.uniform(-1, 1, 400)
    xi = 0.7 - 1.3 * v
    for v0 in np.linspace(-0.9, 0.9, 41):
        theta, slope = local_linear_fit(v, xi, v0, h)
        assert theta == pytest.approx(0.7 - 1.3 * v0, abs=1e-9)
        assert slope == pytest.approx(-1.3, abs=1e-9)


def test_invariances():
    rng = np.random.default_rng(2)
    v = rng.normal(size=200)
    xi = v ** 2 + rng.normal(size=200)
    base, _ = local_linear_fit(v, xi, 0.3, 0.7)
    # translating V and the evaluation point together
    shifted, _ = local_linear_fit(v + 5.0, xi, 5.3, 0.7)
    assert shifted == pytest.approx(base, abs=1e-9)
    # scaling V, the point and h together
    scaled, _ = local_linear_fit(3.0 * v, xi, 0.9, 2.1)
    assert scaled == pytest.approx(base, abs=1e-9)
    # adding a constant to the outcome
    moved, _ = local_linear_fit(v, xi + 2.5, 0.3, 0.7)
    assert moved == pytest.approx(base + 2.5, abs=1e-9)
    # points outside the window do not matter
    far = np.abs(v - 0.3) >= 0.7
    changed = xi.copy()
    changed[far] += 100.0
    local, _ = local_linear_fit(v, changed, 0.3, 0.7)
    assert local == pytest.approx(base, abs=1e-9)
    # duplicating every observation
    doubled, _ = local_linear_fit(np.tile(v, 2), np.tile(xi, 2), 0.3, 0.7)
    assert doubled == pytest.approx(base, abs=1e-9)


# ------------------------------------------------------------------ variance


def test_sandwich_five_point_oracle():
    v = np.array([-0.4, -0.1, 0.0, 0.2, 0.5])
    xi = np.array([1.0, -0.5, 0.3, 2.0, 0.7])
    beta = local_linear_fit(v, xi, 0.0, 0.6)
    assert sandwich_variance(v, xi, 0.0, 0.6, beta) == pytest.approx(
        oracles.sandwich(v, xi, 0.0, 0.6, beta), rel=1e-10, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.3, 2.0))
def test_sandwich_matches_loop_oracle(seed, h):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=80)
    xi = v + rng.normal(size=80)
    beta = local_linear_fit(v, xi, 0.0, h)
    assert sandwich_variance(v, xi, 0.0, h, beta) == pytest.approx(
        oracles.sandwich(v, xi, 0.0, h, beta), rel=1e-10, abs=1e-10)


def test_noiseless_line_has_zero_variance():
    v = np.linspace(-1, 1, 50)
    xi = 2 * v + 1
    beta = local_linear_fit(v, xi, 0.0, 0.5)
    assert sandwich_variance(v, xi, 0.0, 0.5, beta) == pytest.approx(0.0, abs=1e-20)


def test_curve_intervals_use_sandwich_se():
    rng = np.random.default_rng(3)
    v = rng.normal(size=300)
    xi = v + rng.normal(size=300)
    curve = LocalLinearRegression(bandwidth=0.8).fit(v, xi).curve([0.0, 0.5])
    for i, x in enumerate([0.0, 0.5]):
        beta = oracles.weighted_line(v, xi, x, 0.8)
        se = math.sqrt(oracles.sandwich(v, xi, x, 0.8, beta) / 300)
        assert curve.se[i] == pytest.approx(se, rel=1e-9)
        assert curve.ci_lower[i] == pytest.approx(curve.theta_hat[i] - 1.96 * se, rel=1e-9)
        assert curve.ci_upper[i] == pytest.approx(curve.theta_hat[i] + 1.96 * se, rel=1e-9)


# ------------------------------------------------------------ bandwidth CV


def test_default_grid_shape():
    v = np.random.default_rng(4).normal(size=1000)
    grid = default_bandwidth_grid(v)
    sd = np.std(v, ddof=1)
    assert grid.size == 30
    assert grid[0] == pytest.approx(0.1 * sd * 1000 ** -0.2) and grid[-1] == pytest.approx(3 * sd)
    assert np.allclose(np.diff(np.log(grid)), np.log(grid[1] / grid[0]))


def test_constant_v_has_no_grid():
    with pytest.raises(BandwidthError):
        default_bandwidth_grid(np.ones(10))


@pytest.mark.parametrize("interior", [0.0, 0.1])
def test_cv_scores_match_exhaustive_oracle(interior):
    rng = np.random.default_rng(5)
    v = rng.uniform(-1, 1, 120)
    xi = np.sin(3 * v) + 0.3 * rng.normal(size=120)
    grid = np.array([0.02, 0.1, 0.3, 1.0])
    scores, usable = cv_scores(v, xi, grid, folds=5, seed=9, interior=interior)
    fold = _cv_folds(v, xi, 5, 9)
    for j, h in enumerate(grid):
        assert scores[j] == pytest.approx(oracles.cv_score(v, xi, fold, h, interior), rel=1e-9)
    assert usable.all()


def test_cv_folds_ignore_row_order():
    rng = np.random.default_rng(6)
    v, xi = rng.normal(size=200), rng.normal(size=200)
    perm = rng.permutation(200)
    a = cv_scores(v, xi, [0.3, 0.6], seed=1)[0]
    b = cv_scores(v[perm], xi[perm], [0.3, 0.6], seed=1)[0]
    np.testing.assert_array_equal(a, b)


def test_cv_prefers_wide_window_for_lines_and_narrow_for_wiggles():
    rng = np.random.default_rng(7)
    v = rng.uniform(-1, 1, 1000)
    grid = default_bandwidth_grid(v)
    h_line = select_bandwidth_cv(v, 1 + v + 0.5 * rng.normal(size=1000), grid)
    h_wiggle = select_bandwidth_cv(v, np.sin(4 * np.pi * v) + 0.5 * rng.normal(size=1000), grid)
    assert h_line > h_wiggle


def test_ties_go_to_smaller_bandwidth():
    # a noiseless line is fit exactly by every usable bandwidth
    v = np.linspace(0, 1, 50)
    assert select_bandwidth_cv(v, 2 * v, [0.5, 0.8, 1.2], seed=0) == 0.5


def test_one_element_grid_skips_cv():
    assert select_bandwidth_cv(np.arange(5.0), np.zeros(5), [0.7]) == 0.7
    model = LocalLinearRegression(bandwidth_grid=[0.7]).fit(np.arange(5.0), np.zeros(5))
    assert model.bandwidth_ == 0.7


def test_all_degenerate_grid_is_an_error():
    v = np.arange(20.0)
    with pytest.raises(BandwidthError):
        select_bandwidth_cv(v, v, [0.1, 0.2])


def test_bandwidth_spec_validation():
    with pytest.raises(InputError):
        BandwidthSpec(mode="fixed")
    with pytest.raises(InputError):
        BandwidthSpec(grid=(0.5, 0.1))
    with pytest.raises(InputError):
        BandwidthSpec(interior=0.5)
    with pytest.raises(InputError):
        BandwidthSpec(mode="plugin")


# -------------------------------------------------------------- estimator


def test_widening_then_flagging():
    v = np.array([0.0, 0.1, 0.2, 5.0, 5.1])
    xi = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    curve = LocalLinearRegression(bandwidth=0.5).fit(v, xi).curve([0.1, 1.0, 12.0])
    assert curve.flags[0] == ""
    assert curve.flags[1] == "widened_x2"  # 0.5 -> 0.75 -> 1.125 reaches the first cluster
    assert math.isnan(curve.theta_hat[2]) and "degenerate" in curve.flags[2]
    assert "extrapolation" in curve.flags[2]


def test_empty_window_reports_zero_effective_size():
    curve = LocalLinearRegression(bandwidth=0.1, max_widen=0).fit(np.arange(10.0), np.arange(10.0)).curve([20.0])
    assert curve.n_effective[0] == 0 and math.isnan(curve.se[0])


def test_curve_serialisation(tmp_path):
    rng = np.random.default_rng(8)
    v = rng.normal(size=100)
    curve = LocalLinearRegression(bandwidth=1.0).fit(v, v).curve(np.linspace(-1, 1, 41))
    lines = curve.to_csv(tmp_path / "c.csv").splitlines()
    assert lines[0] == "v,theta_hat,slope_hat,se,ci_lower,ci_upper,n_effective,flags" and len(lines) == 42
    d = json.loads(curve.to_json())
    assert d["bandwidth"] == 1.0 and len(d["points"]) == 41


def test_predict_and_clone():
    v = np.linspace(-1, 1, 100)
    model = LocalLinearRegression(bandwidth=0.3).fit(v[:, None], 3 * v)
    np.testing.assert_allclose(model.predict([0.0, 0.5]), [0.0, 1.5], atol=1e-12)
    assert clone(model).get_params()["bandwidth"] == 0.3


def test_fixed_and_cv_bandwidths_validated():
    with pytest.raises(InputError):
        LocalLinearRegression(bandwidth=-1.0).fit(np.arange(3.0), np.zeros(3))
    with pytest.raises(InputError):
        LocalLinearRegression(bandwidth=1.0).fit(np.zeros(1), np.zeros(1))
