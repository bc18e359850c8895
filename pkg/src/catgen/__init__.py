"""Target-population conditional average treatment effect curves from
randomized trials nested in cohorts of trial-eligible individuals.

The pipeline fits cross-fitted nuisance models (trial participation,
treatment and arm-specific outcome regressions, each a super learner),
forms doubly robust pseudo-outcomes and smooths them against a single
effect modifier with a local linear kernel regression.
"""

from .crossfit import (
    NuisanceConfig,
    NuisanceFits,
    PseudoOutcomes,
    build_pseudo_outcomes,
    fit_nuisances,
    partition_cohort,
    pseudo_outcome_arm,
    pseudo_outcome_cate,
    riesz_representer,
)
from .data import Cohort, DiagnosticsReport, SchemaConfig, diagnose_overlap, load_cohort, write_cohort
from .estimator import NestedTrialCATE
from .exceptions import CatgenError, ConfigError, DataError, FitError, InputError, SchemaError
from .learners import LearnerSpec, SuperLearner
from .smoother import (
    BandwidthSpec,
    CateCurve,
    LocalLinearRegression,
    local_linear_fit,
    sandwich_variance,
    select_bandwidth_cv,
    smoothing_bias_reference,
)

__version__ = "0.1.0"

__all__ = [
    "BandwidthSpec",
    "CatgenError",
    "CateCurve",
    "Cohort",
    "ConfigError",
    "DataError",
    "DiagnosticsReport",
    "FitError",
    "InputError",
    "LearnerSpec",
    "LocalLinearRegression",
    "NestedTrialCATE",
    "NuisanceConfig",
    "NuisanceFits",
    "PseudoOutcomes",
    "SchemaConfig",
    "SchemaError",
    "SuperLearner",
    "build_pseudo_outcomes",
    "diagnose_overlap",
    "fit_nuisances",
    "load_cohort",
    "local_linear_fit",
    "partition_cohort",
    "pseudo_outcome_arm",
    "pseudo_outcome_cate",
    "riesz_representer",
    "sandwich_variance",
    "select_bandwidth_cv",
    "smoothing_bias_reference",
    "write_cohort",
]
