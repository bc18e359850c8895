"""Cross-fitted nuisance estimation and pseudo-outcome construction.

Every unit's pseudo-outcome is built from nuisance models trained without
that unit's fold. The selection model p(S=1|X) uses all out-of-fold units;
the treatment model p(A=1|X,S=1) and the arm-specific outcome regressions
gamma(a, X) use out-of-fold trial participants only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import BINARY
from .exceptions import DataError, FitError, InputError
from .learners import IDENTITY, LOGIT, LearnerSpec, SuperLearner, default_library
from .learners.glm import GLMMainEffects

log = logging.getLogger(__name__)

CATE, ARM_1, ARM_0 = "cate", "arm_a1", "arm_a0"


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of ``range(n)`` into ``L`` folds labelled ``1..L``."""

    n: int
    L: int
    fold_of: np.ndarray

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=int).copy()
        fold_of.setflags(write=False)
        object.__setattr__(self, "fold_of", fold_of)
        if fold_of.shape != (self.n,):
            raise InputError("fold_of must have length n")
        if fold_of.min() < 1 or fold_of.max() > self.L:
            raise InputError("fold labels must lie in 1..L")

    def members(self, l):
        return np.flatnonzero(self.fold_of == l)

    def complement(self, l):
        return np.flatnonzero(self.fold_of != l)

    def sizes(self):
        return np.bincount(self.fold_of, minlength=self.L + 1)[1:]


def _check_L(n, L):
    if int(L) != L or L < 2 or L > n:
        raise InputError(f"number of folds must satisfy 2 <= L <= n (got L={L}, n={n})")


def partition_folds(n, L, seed=None):
    """Uniformly random balanced partition of ``range(n)`` into ``L`` folds."""
    _check_L(n, L)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=int)
    fold_of[rng.permutation(n)] = np.arange(n) % L + 1
    return FoldAssignment(n, L, fold_of)


def row_keys(cohort, seed=None):
    """Per-row 64-bit keys derived from row content (and ``seed``).

    Keys do not depend on row position, so anything ordered by them is
    equivariant under permutations of the cohort.
    """
    prefix = b"" if seed is None else f"{int(seed)}|".encode()
    data = np.column_stack([cohort.covariates, cohort.s, cohort.a, cohort.y])
    data = np.where(np.isnan(data), np.nan, data)  # one NaN bit pattern
    keys = np.empty(cohort.n, dtype=np.uint64)
    for i, row in enumerate(data):
        digest = hashlib.blake2b(prefix + row.tobytes(), digest_size=8).digest()
        keys[i] = int.from_bytes(digest, "little")
    return keys


def _canonical(index, keys):
    """``index`` reordered by row key (ties keep input order)."""
    return index[np.argsort(keys[index], kind="stable")]


def _fold_problems(cohort, folds):
    trial = cohort.s == 1
    for l in range(1, folds.L + 1):
        inside = folds.fold_of == l
        if not np.any(inside & trial):
            return f"fold {l} has no trial participants"
        rest = ~inside & trial
        for arm in (0, 1):
            if not np.any(rest & (cohort.a == arm)):
                return f"training set for fold {l} has no trial units with a={arm}"
    return None


def partition_cohort(cohort, L=5, seed=0, stratified=False, max_tries=100):
    """Balanced random fold assignment for a cohort.

    Ranks rows by a seeded content key and deals them round-robin, within
    (s, a) strata when ``stratified``. Partitions that leave a fold without
    trial units, or a training set without one of the arms, are redrawn up
    to ``max_tries`` times.
    """
    _check_L(cohort.n, L)
    if stratified:
        stratum = np.where(cohort.s == 1, 1 + np.nan_to_num(cohort.a), 0)
    else:
        stratum = np.zeros(cohort.n)
    problem = None
    for attempt in range(max_tries):
        tseed = int(np.random.SeedSequence([int(seed), attempt]).generate_state(1)[0])
        keys = row_keys(cohort, tseed)
        order = np.lexsort((keys, stratum))
        fold_of = np.empty(cohort.n, dtype=int)
        fold_of[order] = np.arange(cohort.n) % L + 1
        folds = FoldAssignment(cohort.n, L, fold_of)
        problem = _fold_problems(cohort, folds)
        if problem is None:
            return folds
    raise FitError(f"no valid fold partition after {max_tries} draws: {problem}")


@dataclass
class NuisanceConfig:
    """Settings for first-stage estimation.

    ``treatment_probability`` is either a known constant in (0, 1) (the
    randomisation probability) or ``"fit"`` for a logistic regression.
    """

    library: list = field(default_factory=default_library)
    n_folds: int = 5
    clip_epsilon: float = 0.01
    treatment_probability: Union[float, str] = 0.5
    sl_folds: int = 5
    stratified: bool = False

    def __post_init__(self):
        self.library = [s if isinstance(s, LearnerSpec) else LearnerSpec.from_dict(s) for s in self.library]
        if not 0 < self.clip_epsilon < 0.5:
            raise InputError("clip_epsilon must lie in (0, 0.5)")
        tp = self.treatment_probability
        if tp != "fit" and not (isinstance(tp, (int, float)) and 0 < tp < 1):
            raise InputError("treatment_probability must be 'fit' or a number in (0, 1)")


def data_hash(cohort, index):
    """Provenance tag for a training set: digest of its rows in canonical order."""
    h = hashlib.sha256()
    data = np.column_stack([cohort.covariates, cohort.s, cohort.a, cohort.y])[index]
    h.update(np.ascontiguousarray(data).tobytes())
    return h.hexdigest()[:16]


class ConstantModel:
    """Known treatment probability; no learner involved."""

    def __init__(self, value):
        self.value = float(value)

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)

    def to_dict(self):
        return {"class": "ConstantModel", "value": self.value}


@dataclass
class FoldModels:
    fold: int
    selection: object
    treatment: object
    outcome1: object
    outcome0: object
    provenance: dict

    def to_dict(self):
        return {
            "fold": self.fold,
            "provenance": self.provenance,
            "selection": self.selection.to_dict(),
            "treatment": self.treatment.to_dict(),
            "outcome_a1": self.outcome1.to_dict(),
            "outcome_a0": self.outcome0.to_dict(),
        }


@dataclass
class NuisanceFits:
    """Cross-fitted nuisance predictions for every unit plus per-fold models.

    ``p_s``/``p_a1`` are clipped to [clip_epsilon, 1 - clip_epsilon];
    ``p_s_raw``/``p_a1_raw`` keep the unclipped values for diagnostics.
    """

    folds: FoldAssignment
    clip_epsilon: float
    p_s_raw: np.ndarray
    p_a1_raw: np.ndarray
    gamma1: np.ndarray
    gamma0: np.ndarray
    models: list = field(default_factory=list)

    @property
    def p_s(self):
        return clip(self.p_s_raw, self.clip_epsilon)

    @property
    def p_a1(self):
        return clip(self.p_a1_raw, self.clip_epsilon)

    def to_dict(self):
        return {
            "clip_epsilon": self.clip_epsilon,
            "n_folds": self.folds.L,
            "fold_of": self.folds.fold_of.tolist(),
            "folds": [m.to_dict() for m in self.models],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def ensemble_weights(self):
        """Library weights per fold and nuisance, for run manifests."""
        out = []
        for m in self.models:
            entry = {"fold": m.fold}
            for name in ("selection", "outcome1", "outcome0"):
                model = getattr(m, name)
                entry[name] = model.weights_.tolist()
            out.append(entry)
        return out


def clip(p, eps):
    return np.clip(p, eps, 1.0 - eps)


def _fit_sl(X, y, library, link, k_folds, seed, what):
    k = min(k_folds, X.shape[0] // 2)
    if k < 2:
        raise FitError(f"{what}: only {X.shape[0]} training rows")
    if np.ptp(y) == 0:
        warnings.warn(f"{what}: outcome is constant; fitting a constant model", RuntimeWarning)
    return SuperLearner(library, link=link, k_folds=k, random_state=seed).fit(X, y)


def _fit_fold(cohort, folds, l, config, seed, keys):
    X, trial = cohort.covariates, cohort.s == 1
    train = _canonical(folds.complement(l), keys)
    t_train = train[trial[train]]
    arm1 = t_train[cohort.a[t_train] == 1]
    arm0 = t_train[cohort.a[t_train] == 0]
    if arm1.size == 0 or arm0.size == 0:
        raise FitError(f"fold {l}: training set lacks a treatment arm among trial units")
    seeds = np.random.SeedSequence([int(seed), l]).generate_state(3)
    selection = _fit_sl(X[train], cohort.s[train], config.library, LOGIT, config.sl_folds, int(seeds[0]),
                        f"fold {l} selection model")
    if config.treatment_probability == "fit":
        treatment = GLMMainEffects(link=LOGIT).fit(X[t_train], cohort.a[t_train])
    else:
        treatment = ConstantModel(config.treatment_probability)
    link = LOGIT if cohort.outcome_kind == BINARY else IDENTITY
    outcome1 = _fit_sl(X[arm1], cohort.y[arm1], config.library, link, config.sl_folds, int(seeds[1]),
                       f"fold {l} outcome model (a=1)")
    outcome0 = _fit_sl(X[arm0], cohort.y[arm0], config.library, link, config.sl_folds, int(seeds[2]),
                       f"fold {l} outcome model (a=0)")
    provenance = {
        "selection": data_hash(cohort, train),
        "treatment": data_hash(cohort, t_train),
        "outcome_a1": data_hash(cohort, arm1),
        "outcome_a0": data_hash(cohort, arm0),
    }
    return FoldModels(l, selection, treatment, outcome1, outcome0, provenance)


def fit_nuisances(cohort, folds, config=None, seed=0, n_jobs=1):
    """Fit all per-fold nuisance models and predict them on held-out units."""
    config = config or NuisanceConfig()
    cohort.check_estimable()
    if folds.n != cohort.n:
        raise InputError("fold assignment does not match cohort size")
    problem = _fold_problems(cohort, folds)
    if problem is not None:
        raise FitError(problem)
    keys = row_keys(cohort)
    labels = range(1, folds.L + 1)
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_fit_fold, cohort, folds, l, config, seed, keys) for l in labels]
            models = [f.result() for f in futures]
    else:
        models = [_fit_fold(cohort, folds, l, config, seed, keys) for l in labels]
    n = cohort.n
    p_s, p_a1, g1, g0 = (np.empty(n) for _ in range(4))
    for m in models:
        idx = folds.members(m.fold)
        Xl = cohort.covariates[idx]
        p_s[idx] = m.selection.predict(Xl)
        p_a1[idx] = m.treatment.predict(Xl)
        g1[idx] = m.outcome1.predict(Xl)
        g0[idx] = m.outcome0.predict(Xl)
    return NuisanceFits(folds, float(config.clip_epsilon), p_s, p_a1, g1, g0, models)


def riesz_representer(s, a, p_s, p_a1):
    """S(2A-1) / {p(S=1|X) p(A|X,S=1)}, with p(A|.) the probability of the received arm."""
    if s == 0:
        return 0.0
    if a not in (0, 1):
        raise InputError("a must be 0 or 1 for trial participants")
    if not (0 < p_s <= 1 and 0 < p_a1 < 1):
        raise InputError("probabilities must lie in (0, 1)")
    p_received = p_a1 if a == 1 else 1.0 - p_a1
    return (2 * a - 1) / (p_s * p_received)


@dataclass(frozen=True)
class UnitNuisance:
    """Nuisance values evaluated at one unit's covariates."""

    p_s: float
    p_a1: float
    gamma1: float
    gamma0: float


def pseudo_outcome_cate(s, a, y, nuis):
    """alpha(Z){Y - gamma(A,X)} + gamma(1,X) - gamma(0,X)."""
    m = nuis.gamma1 - nuis.gamma0
    if s == 0:
        return m
    if y is None or np.isnan(y):
        raise DataError("trial participant without an outcome")
    gamma_obs = nuis.gamma1 if a == 1 else nuis.gamma0
    return riesz_representer(s, a, nuis.p_s, nuis.p_a1) * (y - gamma_obs) + m


def pseudo_outcome_arm(s, a, y, nuis, arm):
    """[S I(A=arm) / {p_s p(A=arm)}] (Y - gamma(arm,X)) + gamma(arm,X)."""
    gamma = nuis.gamma1 if arm == 1 else nuis.gamma0
    if s == 0 or a != arm:
        return gamma
    if y is None or np.isnan(y):
        raise DataError("trial participant without an outcome")
    p_arm = nuis.p_a1 if arm == 1 else 1.0 - nuis.p_a1
    return (y - gamma) / (nuis.p_s * p_arm) + gamma


@dataclass
class PseudoOutcomes:
    xi: np.ndarray
    v: np.ndarray
    arm: str = CATE
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.xi.shape != self.v.shape:
            raise InputError("xi and v must have equal length")
        if not np.all(np.isfinite(self.xi)):
            raise FitError("non-finite pseudo-outcomes")

    def __len__(self):
        return self.xi.size

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v", "xi"])
            for v, xi in zip(self.v, self.xi):
                w.writerow([format(v, ".17g"), format(xi, ".17g")])


def build_pseudo_outcomes(cohort, nuisance, arm=CATE, trial_only=False):
    """Vectorised pseudo-outcomes for every unit.

    With ``trial_only`` the non-participants are discarded and the
    selection probability is taken to be 1 for everyone retained.
    """
    s = cohort.s
    trial = s == 1
    a = np.where(trial, cohort.a, 0.0)
    y = np.where(trial, cohort.y, 0.0)
    p_s = np.ones(cohort.n) if trial_only else nuisance.p_s
    p_a1 = nuisance.p_a1
    g1, g0 = nuisance.gamma1, nuisance.gamma0
    if arm == CATE:
        p_recv = np.where(a == 1, p_a1, 1.0 - p_a1)
        alpha = s * (2 * a - 1) / (p_s * p_recv)
        xi = alpha * (y - np.where(a == 1, g1, g0)) + (g1 - g0)
    elif arm in (ARM_1, ARM_0):
        target = 1.0 if arm == ARM_1 else 0.0
        gamma = g1 if arm == ARM_1 else g0
        p_arm = p_a1 if arm == ARM_1 else 1.0 - p_a1
        weight = s * (a == target) / (p_s * p_arm)
        xi = weight * (y - gamma) + gamma
    else:
        raise InputError(f"unknown pseudo-outcome target {arm!r}")
    index = np.flatnonzero(trial) if trial_only else np.arange(cohort.n)
    return PseudoOutcomes(xi[index], cohort.v[index], arm, index)
