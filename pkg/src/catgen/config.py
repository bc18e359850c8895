"""Strict JSON run configuration for the command line front end.

The whole document is parsed and validated before any computation. Every
object in the schema is closed, so a misspelt key is an error rather than a
silently ignored setting. Validation failures raise :class:`ConfigError`
carrying the dotted path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from .crossfit import NuisanceConfig
from .data import OUTCOME_KINDS, SchemaConfig
from .exceptions import CatgenError, ConfigError
from .learners import KINDS, LearnerSpec
from .simulation import ESTIMATORS, DgpSpec, SimulationConfig, default_grid
from .smoother import BandwidthSpec

FORMATS = ("csv", "json")

_NUMBER = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}


def _closed(properties, required=()):
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


_LEARNER = _closed(
    {
        "kind": {"enum": list(KINDS)},
        "hyperparameters": {"type": "object"},
        "link": {"enum": ["identity", "logit"]},
    },
    required=["kind"],
)

SCHEMA = _closed(
    {
        "seed": {"type": "integer", "minimum": 0},
        "data": _closed({"path": {"type": "string", "minLength": 1}}, required=["path"]),
        "schema": _closed(
            {
                "covariate_columns": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "effect_modifier": {"type": "string"},
                "s_column": {"type": "string"},
                "a_column": {"type": "string"},
                "y_column": {"type": "string"},
                "outcome_kind": {"enum": list(OUTCOME_KINDS)},
                "strict": {"type": "boolean"},
            },
            required=["covariate_columns", "effect_modifier"],
        ),
        "nuisance": _closed(
            {
                "library": {"type": "array", "items": _LEARNER, "minItems": 1},
                "n_folds": {"type": "integer"},
                "clip_epsilon": _NUMBER,
                "treatment_probability": {"oneOf": [_NUMBER, {"const": "fit"}]},
                "sl_folds": {"type": "integer"},
                "stratified": {"type": "boolean"},
            }
        ),
        "smoother": _closed(
            {
                "kernel": {"const": "epanechnikov"},
                "bandwidth": _closed(
                    {
                        "mode": {"enum": ["cv", "fixed"]},
                        "h": {"type": ["number", "null"]},
                        "grid": {"type": ["array", "null"], "items": _NUMBER},
                        "folds": {"type": "integer"},
                        "interior": _NUMBER,
                    }
                ),
                "grid": _closed(
                    {
                        "points": {"type": "integer", "minimum": 2},
                        "coverage": _NUMBER,
                        "values": {"type": "array", "items": _NUMBER, "minItems": 1},
                    }
                ),
            }
        ),
        "simulation": _closed(
            {
                "replicates": {"type": "integer"},
                "n": {"type": "array", "items": _POS_INT, "minItems": 1},
                "n_s1_target": {"type": "array", "items": _POS_INT, "minItems": 1},
                "outcome_kind": {"type": "array", "items": {"enum": list(OUTCOME_KINDS)}, "minItems": 1},
                "estimators": {"type": "array", "items": {"enum": list(ESTIMATORS)}, "minItems": 1},
                "dgp": _closed(
                    {
                        "selection_coefficients": {"type": "array", "items": _NUMBER},
                        "treatment_probability": _NUMBER,
                        "base_coefficients": {"type": "array", "items": _NUMBER},
                        "effect_coefficients": {"type": "array", "items": _NUMBER},
                        "noise_sd": _NUMBER,
                        "exact_trial_size": {"type": "boolean"},
                    }
                ),
                "truth_mc_size": _POS_INT,
                "trim_fraction": {"type": ["number", "null"]},
                "dump_replicates": {"type": "boolean"},
            }
        ),
        "output": _closed(
            {
                "directory": {"type": "string", "minLength": 1},
                "formats": {"type": "array", "items": {"enum": list(FORMATS)}, "minItems": 1, "uniqueItems": True},
            }
        ),
    }
)


def _path(error):
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts += extra[:1]
    elif error.validator == "required":
        missing = [r for r in error.validator_value if r not in error.instance]
        parts += missing[:1]
    return ".".join(parts) or "<root>"


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid: explicit ``values`` or ``points`` spread over the central ``coverage`` of V."""

    points: int = 41
    coverage: float = 0.90
    values: Optional[tuple] = None

    def resolve(self, v=None):
        """Grid for an observed sample ``v`` or, without one, for a standard normal V."""
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        if v is None:
            return default_grid(self.points, self.coverage)
        tail = (1.0 - self.coverage) / 2.0
        lo, hi = np.quantile(np.asarray(v, dtype=float), [tail, 1.0 - tail])
        return np.linspace(lo, hi, self.points)


@dataclass(frozen=True)
class SimulationSettings:
    replicates: int = 500
    n: tuple = (2500,)
    n_s1_target: tuple = (1000,)
    outcome_kind: tuple = ("binary",)
    estimators: tuple = ESTIMATORS
    dgp: dict = field(default_factory=dict)
    truth_mc_size: int = 10**7
    trim_fraction: Optional[float] = None
    dump_replicates: bool = False

    def scenarios(self):
        """Scenario matrix n x n_s1_target x outcome_kind, in a fixed order."""
        for kind in self.outcome_kind:
            for n in self.n:
                for n_s1 in self.n_s1_target:
                    yield DgpSpec(outcome_kind=kind, n=n, n_s1_target=n_s1, **self.dgp)


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run configuration.

    ``raw`` keeps the parsed document and ``sha256`` the digest of its
    canonical serialisation, which the run manifest records.
    """

    raw: dict
    sha256: str
    base_dir: str
    seed: int = 0
    data_path: Optional[str] = None
    schema: Optional[SchemaConfig] = None
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    bandwidth: BandwidthSpec = field(default_factory=BandwidthSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    output_dir: str = "catgen_out"
    formats: tuple = FORMATS

    def require_data(self):
        if self.data_path is None:
            raise ConfigError("this command needs a 'data.path' entry", field="data.path")
        if self.schema is None:
            raise ConfigError("this command needs a 'schema' section", field="schema")
        return self.data_path, self.schema

    def simulation_config(self):
        return SimulationConfig(
            library=list(self.nuisance.library),
            n_folds=self.nuisance.n_folds,
            clip_epsilon=self.nuisance.clip_epsilon,
            treatment_probability=self.nuisance.treatment_probability,
            sl_folds=self.nuisance.sl_folds,
            bandwidth=self.bandwidth,
            grid=self.grid.resolve(),
            estimators=tuple(self.simulation.estimators),
        )


def canonical_json(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_digest(doc):
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def _build(field_prefix, factory):
    try:
        return factory()
    except ConfigError as exc:
        name = exc.field if exc.field and "." in exc.field else f"{field_prefix}.{exc.field or ''}".rstrip(".")
        raise ConfigError(str(exc), field=name) from exc
    except (CatgenError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=field_prefix) from exc


def parse_config(doc, base_dir="."):
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, field=_path(err))

    seed = doc.get("seed", 0)
    data_path = None
    if "data" in doc:
        data_path = os.path.normpath(os.path.join(base_dir, doc["data"]["path"]))
    schema = None
    if "schema" in doc:
        schema = _build("schema", lambda: SchemaConfig(**doc["schema"]))

    nu = dict(doc.get("nuisance", {}))
    if nu.get("n_folds", 5) < 2:
        raise ConfigError("n_folds must be at least 2", field="nuisance.n_folds")
    if nu.get("sl_folds", 5) < 2:
        raise ConfigError("sl_folds must be at least 2", field="nuisance.sl_folds")
    if "library" in nu:
        nu["library"] = [
            _build(f"nuisance.library.{i}", lambda d=d: LearnerSpec.from_dict(d))
            for i, d in enumerate(nu["library"])
        ]
    nuisance = _build("nuisance", lambda: NuisanceConfig(**nu))

    sm = doc.get("smoother", {})
    bw = dict(sm.get("bandwidth", {}))
    if bw.get("mode") == "fixed" and bw.get("h") is None:
        raise ConfigError("fixed bandwidth needs h", field="smoother.bandwidth.h")
    bandwidth = _build("smoother.bandwidth", lambda: BandwidthSpec(**bw))
    gr = dict(sm.get("grid", {}))
    if "values" in gr:
        values = tuple(float(x) for x in gr["values"])
        if list(values) != sorted(values):
            raise ConfigError("grid values must be ascending", field="smoother.grid.values")
        gr["values"] = values
    if not 0 < gr.get("coverage", 0.9) <= 1:
        raise ConfigError("grid coverage must lie in (0, 1]", field="smoother.grid.coverage")
    grid = GridSpec(**gr)

    si = dict(doc.get("simulation", {}))
    if si.get("replicates", 500) < 2:
        raise ConfigError("replicates must be at least 2", field="simulation.replicates")
    for key in ("n", "n_s1_target", "outcome_kind", "estimators"):
        if key in si:
            si[key] = tuple(si[key])
    if "dgp" in si:
        si["dgp"] = {k: tuple(v) if isinstance(v, list) else v for k, v in si["dgp"].items()}
    tf = si.get("trim_fraction")
    if tf is not None and not 0 <= tf < 1:
        raise ConfigError("trim_fraction must lie in [0, 1)", field="simulation.trim_fraction")
    simulation = SimulationSettings(**si)
    if "simulation" in doc:
        # build every scenario once so that a bad combination fails here
        _build("simulation", lambda: list(simulation.scenarios()))

    out = doc.get("output", {})
    return RunConfig(
        raw=doc,
        sha256=config_digest(doc),
        base_dir=os.path.abspath(base_dir),
        seed=seed,
        data_path=data_path,
        schema=schema,
        nuisance=nuisance,
        bandwidth=bandwidth,
        grid=grid,
        simulation=simulation,
        output_dir=out.get("directory", "catgen_out"),
        formats=tuple(out.get("formats", FORMATS)),
    )


def load_config(path):
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", field="--config") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", field="--config") from exc
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))
