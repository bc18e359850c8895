"""Cohort container, CSV ingestion and overlap diagnostics.

A cohort holds every trial-eligible individual. Covariates are observed for
all rows; treatment ``a`` and outcome ``y`` exist only for trial participants
(``s == 1``) and are stored as NaN elsewhere.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError, SchemaError

CONTINUOUS = "continuous"
BINARY = "binary"
OUTCOME_KINDS = (CONTINUOUS, BINARY)
ABSENT_TOKENS = ("", "NA")


def _frozen(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Cohort:
    """Nested-trial cohort.

    Parameters
    ----------
    covariates : ndarray of shape (n, p)
    s : ndarray of shape (n,)
        Trial participation indicators.
    a, y : ndarray of shape (n,)
        Treatment and outcome, NaN where ``s == 0``.
    effect_modifier_index : int
        Column of ``covariates`` holding the effect modifier V.
    outcome_kind : {"continuous", "binary"}
    covariate_names : tuple of str, optional
    """

    covariates: np.ndarray
    s: np.ndarray
    a: np.ndarray
    y: np.ndarray
    effect_modifier_index: int = 0
    outcome_kind: str = CONTINUOUS
    covariate_names: Optional[tuple] = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim != 2:
            raise DataError("covariates must be a 2-D matrix")
        n, p = X.shape
        s = np.asarray(self.s, dtype=float).ravel()
        a = np.asarray(self.a, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        for name, arr in (("s", s), ("a", a), ("y", y)):
            if arr.shape[0] != n:
                raise DataError(f"{name} has length {arr.shape[0]}, expected {n}")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain missing or non-finite values")
        if not np.all((s == 0) | (s == 1)):
            row = int(np.flatnonzero((s != 0) & (s != 1))[0])
            raise DataError(f"s must be 0 or 1 (row {row})", row=row)
        if self.outcome_kind not in OUTCOME_KINDS:
            raise DataError(f"unknown outcome_kind {self.outcome_kind!r}")
        if not 0 <= self.effect_modifier_index < p:
            raise DataError(f"effect_modifier_index {self.effect_modifier_index} out of range for {p} covariates")
        trial = s == 1
        leak = ~trial & (~np.isnan(a) | ~np.isnan(y))
        if leak.any():
            row = int(np.flatnonzero(leak)[0])
            raise DataError(f"row {row}: a/y must be absent when s=0", row=row)
        bad_a = trial & ~((a == 0) | (a == 1))
        if bad_a.any():
            row = int(np.flatnonzero(bad_a)[0])
            raise DataError(f"row {row}: a must be 0 or 1 when s=1", row=row)
        bad_y = trial & ~np.isfinite(y)
        if bad_y.any():
            row = int(np.flatnonzero(bad_y)[0])
            raise DataError(f"row {row}: y must be present when s=1", row=row)
        if self.outcome_kind == BINARY:
            bad = trial & ~((y == 0) | (y == 1))
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise DataError(f"row {row}: binary outcome must be 0 or 1", row=row)
        names = self.covariate_names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(p))
        elif len(names) != p:
            raise DataError("covariate_names length does not match covariates")
        object.__setattr__(self, "covariates", _frozen(X))
        object.__setattr__(self, "s", _frozen(s))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def n_s1(self):
        return int(self.s.sum())

    @property
    def n_s0(self):
        return self.n - self.n_s1

    @property
    def v(self):
        """Effect-modifier values for all units."""
        return self.covariates[:, self.effect_modifier_index]

    def check_estimable(self):
        """Raise unless both strata and both trial arms are non-empty."""
        if self.n_s1 == 0 or self.n_s0 == 0:
            raise DataError(f"need units with s=1 and s=0, got n_s1={self.n_s1}, n_s0={self.n_s0}")
        trial = self.s == 1
        if not (np.any(self.a[trial] == 1) and np.any(self.a[trial] == 0)):
            raise DataError("need at least one treated and one control trial participant")
        return self

    def take(self, index):
        """Sub-cohort of the given rows (in the given order)."""
        index = np.asarray(index)
        return Cohort(
            covariates=self.covariates[index],
            s=self.s[index],
            a=self.a[index],
            y=self.y[index],
            effect_modifier_index=self.effect_modifier_index,
            outcome_kind=self.outcome_kind,
            covariate_names=self.covariate_names,
        )

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        same = lambda u, w: u.shape == w.shape and np.array_equal(u, w, equal_nan=True)
        return (
            same(self.covariates, other.covariates)
            and same(self.s, other.s)
            and same(self.a, other.a)
            and same(self.y, other.y)
            and self.effect_modifier_index == other.effect_modifier_index
            and self.outcome_kind == other.outcome_kind
            and self.covariate_names == other.covariate_names
        )

    __hash__ = None


@dataclass(frozen=True)
class SchemaConfig:
    """Column mapping for CSV ingestion."""

    covariate_columns: Sequence[str]
    effect_modifier: str
    s_column: str = "s"
    a_column: str = "a"
    y_column: str = "y"
    outcome_kind: str = CONTINUOUS
    strict: bool = True

    def __post_init__(self):
        cols = tuple(self.covariate_columns)
        object.__setattr__(self, "covariate_columns", cols)
        if not cols:
            raise SchemaError("covariate_columns must not be empty")
        if len(set(cols)) != len(cols):
            raise SchemaError("covariate_columns contains duplicates")
        if cols.count(self.effect_modifier) != 1:
            raise SchemaError(
                f"effect_modifier {self.effect_modifier!r} must appear exactly once in covariate_columns",
                column=self.effect_modifier,
            )
        if self.outcome_kind not in OUTCOME_KINDS:
            raise SchemaError(f"unknown outcome_kind {self.outcome_kind!r}")


def _parse(token, row, column):
    token = token.strip()
    if token in ABSENT_TOKENS:
        return math.nan
    try:
        return float(token)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} is not numeric: {token!r}", row=row) from None


def load_cohort(path, schema):
    """Read a cohort from CSV.

    Row numbers in error messages count data rows from 1 (the header is
    row 0).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        needed = [schema.s_column, schema.a_column, schema.y_column, *schema.covariate_columns]
        for col in needed:
            if col not in header:
                raise SchemaError(f"missing column {col!r}", column=col)
        pos = {name: header.index(name) for name in needed}
        X, S, A, Y = [], [], [], []
        for row, record in enumerate(reader, start=1):
            if not record or all(not tok.strip() for tok in record):
                continue
            if len(record) != len(header):
                raise DataError(f"row {row}: expected {len(header)} fields, got {len(record)}", row=row)
            s = _parse(record[pos[schema.s_column]], row, schema.s_column)
            if s not in (0.0, 1.0):
                raise DataError(f"row {row}: s must be 0 or 1, got {record[pos[schema.s_column]]!r}", row=row)
            a = _parse(record[pos[schema.a_column]], row, schema.a_column)
            y = _parse(record[pos[schema.y_column]], row, schema.y_column)
            if s == 0 and not (math.isnan(a) and math.isnan(y)):
                if schema.strict:
                    raise DataError(f"row {row}: a/y present for a non-participant (s=0)", row=row)
                warnings.warn(f"row {row}: dropping a/y recorded for a non-participant", stacklevel=2)
                a = y = math.nan
            if s == 1:
                if math.isnan(a) or math.isnan(y):
                    raise DataError(f"row {row}: trial participant is missing a or y", row=row)
                if a not in (0.0, 1.0):
                    raise DataError(f"row {row}: a must be 0 or 1", row=row)
                if schema.outcome_kind == BINARY and y not in (0.0, 1.0):
                    raise DataError(f"row {row}: binary outcome must be 0 or 1, got {y!r}", row=row)
            x = [_parse(record[pos[c]], row, c) for c in schema.covariate_columns]
            if any(math.isnan(val) for val in x):
                raise DataError(f"row {row}: missing covariate value", row=row)
            X.append(x)
            S.append(s)
            A.append(a)
            Y.append(y)
    if not X:
        raise DataError(f"{path}: no data rows")
    return Cohort(
        covariates=np.array(X),
        s=np.array(S),
        a=np.array(A),
        y=np.array(Y),
        effect_modifier_index=schema.covariate_columns.index(schema.effect_modifier),
        outcome_kind=schema.outcome_kind,
        covariate_names=schema.covariate_columns,
    )


def _fmt(value):
    return "" if math.isnan(value) else format(value, ".17g")


def write_cohort(cohort, path, s_column="s", a_column="a", y_column="y"):
    """Write ``cohort`` to CSV with 17 significant digits (exact round trip)."""
    header = [*cohort.covariate_names, s_column, a_column, y_column]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(cohort.n):
            writer.writerow(
                [_fmt(x) for x in cohort.covariates[i]]
                + [_fmt(cohort.s[i]), _fmt(cohort.a[i]), _fmt(cohort.y[i])]
            )


def schema_for(cohort, **kwargs):
    """SchemaConfig matching a cohort written by :func:`write_cohort`."""
    return SchemaConfig(
        covariate_columns=cohort.covariate_names,
        effect_modifier=cohort.covariate_names[cohort.effect_modifier_index],
        outcome_kind=cohort.outcome_kind,
        **kwargs,
    )


@dataclass
class DiagnosticsReport:
    n: int
    n_s1: int
    n_s0: int
    empirical_selection_range: tuple
    empirical_treatment_range: tuple
    clip_threshold: float
    count_below_threshold: int
    covariate_balance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n": self.n,
            "n_s1": self.n_s1,
            "n_s0": self.n_s0,
            "empirical_selection_range": list(self.empirical_selection_range),
            "empirical_treatment_range": list(self.empirical_treatment_range),
            "clip_threshold": self.clip_threshold,
            "count_below_threshold": self.count_below_threshold,
            "covariate_balance": self.covariate_balance,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# fsum keeps the summaries independent of row order
def _mean(x):
    return math.fsum(x) / x.size if x.size else None


def _sd(x):
    if x.size < 2:
        return None
    m = _mean(x)
    return math.sqrt(math.fsum((x - m) ** 2) / (x.size - 1))


def diagnose_overlap(cohort, nuisance):
    """Summarise empirical positivity of trial participation and treatment.

    Uses the unclipped cross-fitted probabilities stored on ``nuisance`` so
    that units the clipping rule would rescue are still counted.
    """
    p_s = np.asarray(nuisance.p_s_raw)
    trial = cohort.s == 1
    p_a = np.asarray(nuisance.p_a1_raw)[trial]
    balance = {}
    for j, name in enumerate(cohort.covariate_names):
        col = cohort.covariates[:, j]
        balance[name] = {
            stratum: {
                "mean": _mean(col[mask]),
                "sd": _sd(col[mask]),
            }
            for stratum, mask in (("s1", trial), ("s0", ~trial))
        }
    return DiagnosticsReport(
        n=cohort.n,
        n_s1=cohort.n_s1,
        n_s0=cohort.n_s0,
        empirical_selection_range=(float(p_s.min()), float(p_s.max())),
        empirical_treatment_range=(float(p_a.min()), float(p_a.max())) if p_a.size else (math.nan, math.nan),
        clip_threshold=float(nuisance.clip_epsilon),
        count_below_threshold=int(np.sum(p_s < nuisance.clip_epsilon)),
        covariate_balance=balance,
    )
