"""Monte Carlo study of the nested-trial CATE estimator.

Synthetic cohorts have three iid standard-normal covariates; trial
participation follows a logistic model, treatment is randomised with a
known probability among participants, and the effect modifier is X2.
Replicates are compared against the true CATE curve with integrated
absolute bias, integrated RMSE and integrated coverage.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .crossfit import NuisanceConfig, build_pseudo_outcomes, fit_nuisances, partition_cohort
from .data import BINARY, CONTINUOUS, Cohort
from .exceptions import InputError
from .learners import LearnerSpec
from .smoother import Z_975, BandwidthSpec, LocalLinearRegression, smoothing_bias_reference

PROPOSED, NAIVE, ORACLE, TRIAL_ONLY = "proposed_local_linear", "naive_linear", "oracle_form", "trial_only"
ESTIMATORS = (PROPOSED, NAIVE, ORACLE, TRIAL_ONLY)

V_INDEX = 1  # X2 is the effect modifier
CALIBRATION_DRAWS = 1_000_000
CALIBRATION_SEED = 20_240_917

DEFAULT_SELECTION = (0.8, 0.3, -0.8)
DEFAULT_BASE = {CONTINUOUS: (1.0, 1.0, 1.0, 1.0), BINARY: (-0.5, 0.5, 0.5, 0.3)}
# treatment-effect terms on the linear-predictor scale: (1, X1, X2, X3, X2^2)
DEFAULT_EFFECT = {CONTINUOUS: (1.0, 0.0, 1.0, 0.0, -0.5), BINARY: (0.8, 1.0, 0.6, -1.0, -1.0)}


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process for one simulation scenario.

    ``base_coefficients`` are (intercept, X1, X2, X3) of the control-arm
    linear predictor; ``effect_coefficients`` add A * (c0 + c1 X1 + c2 X2 +
    c3 X3 + c4 X2^2). Continuous outcomes add N(0, noise_sd^2) noise, binary
    outcomes pass the predictor through the logistic function. The
    selection intercept is calibrated so that E[sum(S)] = n_s1_target.
    """

    outcome_kind: str = BINARY
    n: int = 2500
    n_s1_target: int = 1000
    selection_coefficients: tuple = DEFAULT_SELECTION
    treatment_probability: float = 0.5
    base_coefficients: Optional[tuple] = None
    effect_coefficients: Optional[tuple] = None
    noise_sd: float = 1.0
    exact_trial_size: bool = False

    def __post_init__(self):
        if self.outcome_kind not in (CONTINUOUS, BINARY):
            raise InputError(f"unknown outcome_kind {self.outcome_kind!r}")
        if not 0 < self.n_s1_target < self.n:
            raise InputError("need 0 < n_s1_target < n")
        if len(self.selection_coefficients) != 3:
            raise InputError("selection_coefficients needs three slopes (X1, X2, X3)")
        if self.base_coefficients is None:
            object.__setattr__(self, "base_coefficients", DEFAULT_BASE[self.outcome_kind])
        if self.effect_coefficients is None:
            object.__setattr__(self, "effect_coefficients", DEFAULT_EFFECT[self.outcome_kind])
        for name, size in (("base_coefficients", 4), ("effect_coefficients", 5)):
            value = tuple(float(c) for c in getattr(self, name))
            if len(value) != size:
                raise InputError(f"{name} needs {size} entries")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "selection_coefficients", tuple(float(c) for c in self.selection_coefficients))
        if not 0 < self.treatment_probability < 1:
            raise InputError("treatment_probability must lie in (0, 1)")

    @property
    def selection_intercept(self):
        return calibrate_intercept(self.selection_coefficients, self.n_s1_target / self.n)

    def to_dict(self):
        d = asdict(self)
        d["selection_intercept"] = self.selection_intercept
        return d


@lru_cache(maxsize=64)
def calibrate_intercept(slopes, fraction):
    """beta0 with E[expit(beta0 + slopes . X)] = fraction, X ~ N(0, I_3)."""
    X = np.random.default_rng(CALIBRATION_SEED).standard_normal((CALIBRATION_DRAWS, 3))
    lin = X @ np.asarray(slopes)
    return brentq(lambda b: expit(b + lin).mean() - fraction, -30.0, 30.0, xtol=1e-12)


def _predictors(dgp, X):
    b = dgp.base_coefficients
    c = dgp.effect_coefficients
    eta0 = b[0] + X[..., 0] * b[1] + X[..., 1] * b[2] + X[..., 2] * b[3]
    effect = c[0] + c[1] * X[..., 0] + c[2] * X[..., 1] + c[3] * X[..., 2] + c[4] * X[..., 1] ** 2
    return eta0, eta0 + effect


def generate_cohort(dgp, seed=None):
    rng = np.random.default_rng(seed)
    n = dgp.n
    X = rng.standard_normal((n, 3))
    p_s = expit(dgp.selection_intercept + X @ np.asarray(dgp.selection_coefficients))
    if dgp.exact_trial_size:
        s = np.zeros(n)
        s[rng.choice(n, size=dgp.n_s1_target, replace=False, p=p_s / p_s.sum())] = 1.0
    else:
        s = (rng.random(n) < p_s).astype(float)
    a_all = (rng.random(n) < dgp.treatment_probability).astype(float)
    eta0, eta1 = _predictors(dgp, X)
    mean = np.where(a_all == 1, eta1, eta0)
    if dgp.outcome_kind == CONTINUOUS:
        y_all = mean + dgp.noise_sd * rng.standard_normal(n)
    else:
        y_all = (rng.random(n) < expit(mean)).astype(float)
    trial = s == 1
    return Cohort(
        covariates=X,
        s=s,
        a=np.where(trial, a_all, np.nan),
        y=np.where(trial, y_all, np.nan),
        effect_modifier_index=V_INDEX,
        outcome_kind=dgp.outcome_kind,
        covariate_names=("x1", "x2", "x3"),
    )


def true_selection_probability(dgp, X):
    return expit(dgp.selection_intercept + np.asarray(X) @ np.asarray(dgp.selection_coefficients))


def true_outcome_mean(dgp, X, a):
    eta0, eta1 = _predictors(dgp, np.asarray(X))
    eta = eta1 if a == 1 else eta0
    return eta if dgp.outcome_kind == CONTINUOUS else expit(eta)


def _closed_form(dgp, v):
    c = dgp.effect_coefficients
    return c[0] + c[2] * v + c[4] * v * v


def true_cate(dgp, v, mc_size=10**7, seed=0, chunk=1_000_000):
    """True CATE E(Y^1 - Y^0 | X2 = v) in the target population.

    Continuous outcomes use the closed form; binary outcomes integrate over
    (X1, X3) by Monte Carlo with ``mc_size`` draws shared across ``v``.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if dgp.outcome_kind == CONTINUOUS:
        return _closed_form(dgp, v)
    rng = np.random.default_rng(seed)
    total = np.zeros(v.size)
    done = 0
    while done < mc_size:
        m = min(chunk, mc_size - done)
        Z = rng.standard_normal((m, 2))
        for i, x2 in enumerate(v):
            X = np.column_stack([Z[:, 0], np.full(m, x2), Z[:, 1]])
            eta0, eta1 = _predictors(dgp, X)
            total[i] += np.sum(expit(eta1) - expit(eta0))
        done += m
    return total / mc_size


def cate_quadrature(dgp, v, nodes=80):
    """True CATE by tensor Gauss-Hermite quadrature over (X1, X3)."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if dgp.outcome_kind == CONTINUOUS:
        return _closed_form(dgp, v)
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    z1, z3 = np.meshgrid(z, z, indexing="ij")
    ww = np.outer(w, w)
    out = np.empty(v.size)
    for i, x2 in enumerate(v):
        X = np.stack([z1, np.full_like(z1, x2), z3], axis=-1)
        eta0, eta1 = _predictors(dgp, X)
        out[i] = np.sum(ww * (expit(eta1) - expit(eta0)))
    return out


def cate_second_derivative(dgp, v, step=1e-3):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if dgp.outcome_kind == CONTINUOUS:
        return np.full(v.size, 2.0 * dgp.effect_coefficients[4])
    f = lambda x: cate_quadrature(dgp, x)
    return (f(v + step) - 2.0 * f(v) + f(v - step)) / step**2


def default_grid(points=41, coverage=0.90):
    """Equispaced points over the central ``coverage`` range of X2 ~ N(0, 1)."""
    from scipy.stats import norm

    q = norm.ppf(0.5 + coverage / 2.0)
    return np.linspace(-q, q, points)


@dataclass
class SimulationConfig:
    """Estimation settings shared by every replicate of a scenario."""

    library: list = field(default_factory=lambda: [LearnerSpec("glm_main_effects"), LearnerSpec("ridge_poly2")])
    n_folds: int = 5
    clip_epsilon: float = 0.01
    treatment_probability: object = 0.5
    sl_folds: int = 5
    bandwidth: BandwidthSpec = field(default_factory=BandwidthSpec)
    grid: np.ndarray = field(default_factory=default_grid)
    estimators: tuple = ESTIMATORS

    def nuisance_config(self):
        return NuisanceConfig(
            library=self.library,
            n_folds=self.n_folds,
            clip_epsilon=self.clip_epsilon,
            treatment_probability=self.treatment_probability,
            sl_folds=self.sl_folds,
        )


def _ols_curve(v, xi, grid, degree):
    """Least squares of xi on (1, v, ..., v^degree) with HC0 pointwise SEs."""
    B = np.vander(v, degree + 1, increasing=True)
    G = np.vander(grid, degree + 1, increasing=True)
    bread = np.linalg.inv(B.T @ B)
    coef = bread @ (B.T @ xi)
    resid = xi - B @ coef
    meat = (B * resid[:, None] ** 2).T @ B
    cov = bread @ meat @ bread
    fit = G @ coef
    se = np.sqrt(np.einsum("ij,jk,ik->i", G, cov, G))
    return fit, fit - Z_975 * se, fit + Z_975 * se


def _local_linear(pseudo, grid, bw, seed):
    if bw.mode == "fixed":
        model = LocalLinearRegression(bandwidth=bw.h)
    else:
        model = LocalLinearRegression(bandwidth="cv", bandwidth_grid=bw.grid, cv_folds=bw.folds, cv_interior=bw.interior,
                                      random_state=seed)
    curve = model.fit(pseudo.v, pseudo.xi).curve(grid)
    return curve.theta_hat, curve.ci_lower, curve.ci_upper, curve.bandwidth


@dataclass
class ReplicateResult:
    """Per-estimator arrays (theta, lower, upper) on the grid and bandwidths used."""

    seed: int
    n_s1: int
    theta: dict
    lower: dict
    upper: dict
    bandwidth: dict


def run_replicate(dgp, config=None, seed=0, estimators=None):
    """Generate one cohort and apply every requested second stage.

    All estimators share one fold split, one set of nuisance fits and one
    pseudo-outcome construction; ``trial_only`` re-weights the same fits
    with p(S=1|X) = 1 and keeps participants only.
    """
    config = config or SimulationConfig()
    estimators = tuple(estimators or config.estimators)
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise InputError(f"unknown estimators {sorted(unknown)}")
    if ORACLE in estimators and dgp.outcome_kind != CONTINUOUS:
        estimators = tuple(e for e in estimators if e != ORACLE)
    ss = np.random.SeedSequence(seed)
    s_data, s_folds, s_fit, s_bw = (int(x) for x in ss.generate_state(4))
    cohort = generate_cohort(dgp, s_data)
    folds = partition_cohort(cohort, config.n_folds, s_folds)
    nuisance = fit_nuisances(cohort, folds, config.nuisance_config(), seed=s_fit)
    pseudo = build_pseudo_outcomes(cohort, nuisance)
    grid = np.asarray(config.grid, dtype=float)
    out = ReplicateResult(seed, cohort.n_s1, {}, {}, {}, {})

    def put(name, res):
        out.theta[name], out.lower[name], out.upper[name] = res[:3]
        out.bandwidth[name] = res[3] if len(res) > 3 else math.nan

    if PROPOSED in estimators:
        put(PROPOSED, _local_linear(pseudo, grid, config.bandwidth, s_bw))
    if NAIVE in estimators:
        put(NAIVE, _ols_curve(pseudo.v, pseudo.xi, grid, 1))
    if ORACLE in estimators:
        put(ORACLE, _ols_curve(pseudo.v, pseudo.xi, grid, 2))
    if TRIAL_ONLY in estimators:
        trial = build_pseudo_outcomes(cohort, nuisance, trial_only=True)
        put(TRIAL_ONLY, _local_linear(trial, grid, config.bandwidth, s_bw))
    return out


@dataclass
class EstimatorSummary:
    integrated_abs_bias: float
    integrated_rmse: float
    integrated_coverage: float
    integrated_coverage_smoothed: float
    integrated_coverage_mean_curve: float
    replicates: int
    trimmed: bool


def _trim_mask(theta, fraction):
    """Per grid point, drop the floor(R * fraction / 2) lowest and highest values."""
    R = theta.shape[0]
    k = int(math.floor(R * fraction / 2.0))
    keep = np.ones_like(theta, dtype=bool)
    if k == 0:
        return keep
    order = np.argsort(theta, axis=0, kind="stable")
    for j in range(theta.shape[1]):
        keep[order[:k, j], j] = False
        keep[order[R - k:, j], j] = False
    return keep


def integrated_metrics(theta, lower, upper, truth, trim_fraction=0.0, smoothed_truth=None):
    """Integrated |bias|, RMSE and coverage (percent) over a grid.

    ``theta``, ``lower`` and ``upper`` have shape (replicates, grid points).
    Coverage is reported against ``truth``, against ``smoothed_truth`` (per
    replicate, defaults to ``truth``) and against the replicate-mean curve.
    """
    theta = np.asarray(theta, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if theta.ndim != 2 or theta.shape != lower.shape or theta.shape != upper.shape:
        raise InputError("theta, lower and upper must share shape (replicates, grid)")
    if truth.shape != (theta.shape[1],):
        raise InputError(f"truth has length {truth.size}, grid has {theta.shape[1]} points")
    if theta.shape[0] < 2:
        raise InputError("need at least two replicates")
    if smoothed_truth is None:
        smoothed_truth = np.broadcast_to(truth, theta.shape)
    smoothed_truth = np.broadcast_to(np.asarray(smoothed_truth, dtype=float), theta.shape)
    keep = _trim_mask(theta, trim_fraction) if trim_fraction > 0 else np.ones_like(theta, dtype=bool)
    keep &= np.isfinite(theta)
    count = keep.sum(0)
    err = np.where(keep, theta - truth, 0.0)
    bias = err.sum(0) / count
    rmse = np.sqrt((err**2).sum(0) / count)
    mean_curve = np.where(keep, theta, 0.0).sum(0) / count

    def cover(target):
        hit = keep & (lower <= target) & (target <= upper)
        return float(np.mean(hit.sum(0) / count) * 100.0)

    return EstimatorSummary(
        integrated_abs_bias=float(np.mean(np.abs(bias))),
        integrated_rmse=float(np.mean(rmse)),
        integrated_coverage=cover(truth),
        integrated_coverage_smoothed=cover(smoothed_truth),
        integrated_coverage_mean_curve=cover(mean_curve),
        replicates=int(theta.shape[0]),
        trimmed=bool(trim_fraction > 0),
    )


@dataclass
class SimulationReport:
    scenario: dict
    estimators: dict
    mean_n_s1: float = math.nan
    mean_bandwidth: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "mean_n_s1": self.mean_n_s1,
            "mean_bandwidth": self.mean_bandwidth,
            "estimators": {k: asdict(v) for k, v in self.estimators.items()},
        }

    CSV_COLUMNS = (
        "outcome_kind", "n", "n_s1_target", "estimator", "replicates", "trimmed",
        "integrated_abs_bias", "integrated_rmse", "integrated_coverage",
        "integrated_coverage_smoothed", "integrated_coverage_mean_curve",
    )

    def csv_rows(self):
        for name, s in self.estimators.items():
            yield (
                self.scenario["outcome_kind"], self.scenario["n"], self.scenario["n_s1_target"], name,
                s.replicates, s.trimmed, s.integrated_abs_bias, s.integrated_rmse, s.integrated_coverage,
                s.integrated_coverage_smoothed, s.integrated_coverage_mean_curve,
            )


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SimulationReport.CSV_COLUMNS)
    for r in reports:
        for row in r.csv_rows():
            w.writerow([format(x, ".17g") if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def replicate_seeds(master_seed, dgp, replicates):
    tag = [dgp.n, dgp.n_s1_target, 0 if dgp.outcome_kind == CONTINUOUS else 1]
    children = np.random.SeedSequence([int(master_seed), *tag]).generate_state(replicates)
    return [int(c) for c in children]


def _run_one(args):
    dgp, config, seed = args
    return run_replicate(dgp, config, seed)


def run_scenario(dgp, config=None, replicates=500, seed=0, workers=1, trim_fraction=None,
                 truth=None, truth_mc_size=10**7):
    """Run ``replicates`` replicates and summarise each estimator.

    ``trim_fraction`` defaults to 0.05 for scenarios with at most 125
    expected trial participants and 0 otherwise. Returns the report and the
    list of per-replicate results.
    """
    config = config or SimulationConfig()
    if replicates < 2:
        raise InputError("need at least two replicates")
    grid = np.asarray(config.grid, dtype=float)
    if truth is None:
        truth = true_cate(dgp, grid, mc_size=truth_mc_size)
    if trim_fraction is None:
        trim_fraction = 0.05 if dgp.n_s1_target <= 125 else 0.0
    tasks = [(dgp, config, s) for s in replicate_seeds(seed, dgp, replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_run_one(t) for t in tasks]
    curvature = cate_second_derivative(dgp, grid)
    summaries, mean_h = {}, {}
    for name in results[0].theta:
        theta = np.array([r.theta[name] for r in results])
        lower = np.array([r.lower[name] for r in results])
        upper = np.array([r.upper[name] for r in results])
        h = np.array([r.bandwidth[name] for r in results])
        smoothed = None
        if np.all(np.isfinite(h)):
            smoothed = truth[None, :] + smoothing_bias_reference(curvature[None, :], h[:, None])
            mean_h[name] = float(h.mean())
        summaries[name] = integrated_metrics(theta, lower, upper, truth, trim_fraction, smoothed)
    scenario = {
        "outcome_kind": dgp.outcome_kind,
        "n": dgp.n,
        "n_s1_target": dgp.n_s1_target,
        "replicates": replicates,
        "seed": int(seed),
        "trim_fraction": trim_fraction,
        "dgp": dgp.to_dict(),
    }
    report = SimulationReport(scenario, summaries, float(np.mean([r.n_s1 for r in results])), mean_h)
    return report, results


def replicate_to_csv(result, grid):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "v", "theta_hat", "ci_lower", "ci_upper", "bandwidth"])
    for name in result.theta:
        for j, v in enumerate(grid):
            w.writerow([
                name,
                format(v, ".17g"),
                format(result.theta[name][j], ".17g"),
                format(result.lower[name][j], ".17g"),
                format(result.upper[name][j], ".17g"),
                format(result.bandwidth[name], ".17g"),
            ])
    return buf.getvalue()


def reports_to_json(reports):
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
