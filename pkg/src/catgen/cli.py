"""Command line interface.

Usage::

    catgen estimate|simulate|diagnose|bandwidth --config run.json [--seed k] [--workers N] [--out dir]
    catgen replay --manifest out/manifest.json [--workers N] [--out dir]

Every command writes its outputs plus ``manifest.json`` into the output
directory. Outputs depend only on the config, the input files and the seed,
so a rerun reproduces them byte for byte whatever ``--workers`` is. Wall
time goes to stderr, never into a file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
error. Failures print a single line to stderr::

    catgen-error {"exit_code": 2, "field": "nuisance.n_folds", "kind": "config", "message": "..."}
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .config import canonical_json, config_digest, load_config, parse_config
from .crossfit import CATE, build_pseudo_outcomes, fit_nuisances, partition_cohort
from .data import diagnose_overlap, load_cohort
from .exceptions import CatgenError, ConfigError, DataError
from .simulation import replicate_to_csv, reports_to_csv, reports_to_json, run_scenario, true_cate
from .smoother import LocalLinearRegression, _argmin_bandwidth, cv_scores, default_bandwidth_grid

log = logging.getLogger("catgen")

COMMANDS = ("estimate", "simulate", "diagnose", "bandwidth")
MANIFEST = "manifest.json"


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:  # running from a source tree
        return "unknown"


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


class _Writer:
    """Collects output files so the manifest can list their digests."""

    def __init__(self, directory):
        self.directory = directory
        self.files = {}
        os.makedirs(directory, exist_ok=True)

    def write(self, name, text):
        path = os.path.join(self.directory, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        data = text.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(data)
        self.files[name] = hashlib.sha256(data).hexdigest()


def _load_data(cfg):
    path, schema = cfg.require_data()
    if not os.path.isfile(path):
        raise DataError(f"data file not found: {path}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cohort = load_cohort(path, schema)
    for w in caught:
        log.warning("%s", w.message)
    return cohort, {"path": path, "sha256": _sha256_file(path)}


def _first_stage(cfg, seed, workers):
    cohort, data = _load_data(cfg)
    cohort.check_estimable()
    folds = partition_cohort(cohort, L=cfg.nuisance.n_folds, seed=seed, stratified=cfg.nuisance.stratified)
    nuisance = fit_nuisances(cohort, folds, cfg.nuisance, seed=seed, n_jobs=workers)
    return cohort, nuisance, data


def _smoother(cfg, seed):
    bw = cfg.bandwidth
    if bw.mode == "fixed":
        return LocalLinearRegression(bandwidth=bw.h, random_state=seed)
    return LocalLinearRegression(
        bandwidth="cv", bandwidth_grid=bw.grid, cv_folds=bw.folds, cv_interior=bw.interior, random_state=seed
    )


def cmd_estimate(cfg, seed, workers, out):
    cohort, nuisance, data = _first_stage(cfg, seed, workers)
    pseudo = build_pseudo_outcomes(cohort, nuisance, arm=CATE)
    model = _smoother(cfg, seed).fit(pseudo.v, pseudo.xi)
    curve = model.curve(cfg.grid.resolve(cohort.v))
    if "csv" in cfg.formats:
        out.write("curve.csv", curve.to_csv())
    if "json" in cfg.formats:
        out.write("curve.json", curve.to_json())
    results = {
        "n": cohort.n,
        "n_s1": cohort.n_s1,
        "bandwidth": model.bandwidth_,
        "grid_points": int(curve.grid.size),
        "flagged_points": sum(1 for f in curve.flags if f),
        "library": [s.to_dict() for s in cfg.nuisance.library],
        "library_weights": nuisance.ensemble_weights(),
    }
    return results, data


def cmd_diagnose(cfg, seed, workers, out):
    cohort, nuisance, data = _first_stage(cfg, seed, workers)
    report = diagnose_overlap(cohort, nuisance)
    out.write("diagnostics.json", report.to_json())
    return {"n": cohort.n, "n_s1": cohort.n_s1, "count_below_threshold": report.count_below_threshold}, data


def cmd_bandwidth(cfg, seed, workers, out):
    cohort, nuisance, data = _first_stage(cfg, seed, workers)
    pseudo = build_pseudo_outcomes(cohort, nuisance, arm=CATE)
    bw = cfg.bandwidth
    grid = np.asarray(bw.grid if bw.grid is not None else default_bandwidth_grid(pseudo.v), dtype=float)
    scores, usable = cv_scores(pseudo.v, pseudo.xi, grid, bw.folds, seed, bw.interior)
    chosen = _argmin_bandwidth(grid, scores, usable)
    lines = ["h,cv_score,usable,selected"]
    for j in np.argsort(grid, kind="stable"):
        score = format(scores[j], ".17g") if usable[j] else "nan"
        lines.append(f"{grid[j]:.17g},{score},{int(usable[j])},{int(grid[j] == chosen)}")
    out.write("bandwidth.csv", "\n".join(lines) + "\n")
    return {"n": cohort.n, "bandwidth": chosen, "grid_points": int(grid.size)}, data


def cmd_simulate(cfg, seed, workers, out):
    settings = cfg.simulation
    sim_config = cfg.simulation_config()
    reports = []
    for dgp in settings.scenarios():
        truth = true_cate(dgp, sim_config.grid, mc_size=settings.truth_mc_size)
        report, results = run_scenario(
            dgp, sim_config, replicates=settings.replicates, seed=seed, workers=workers,
            trim_fraction=settings.trim_fraction, truth=truth,
        )
        reports.append(report)
        if settings.dump_replicates:
            tag = f"{dgp.outcome_kind}_n{dgp.n}_s{dgp.n_s1_target}"
            for r, res in enumerate(results):
                out.write(f"replicates/{tag}/replicate_{r:04d}.csv", replicate_to_csv(res, sim_config.grid))
    if "json" in cfg.formats:
        out.write("report.json", reports_to_json(reports))
    if "csv" in cfg.formats:
        out.write("report.csv", reports_to_csv(reports))
    return {"scenarios": len(reports), "replicates": settings.replicates}, None


HANDLERS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "bandwidth": cmd_bandwidth,
}


def run_command(command, cfg, seed, workers, out_dir):
    """Run one command and write its outputs and manifest. Returns the manifest."""
    out = _Writer(out_dir)
    results, data = HANDLERS[command](cfg, seed, workers, out)
    manifest = {
        "command": command,
        "catgen_version": _version(),
        "seed": seed,
        "config_sha256": cfg.sha256,
        "config_dir": cfg.base_dir,
        "config": cfg.raw,
        "data": data,
        "results": results,
        "outputs": dict(sorted(out.files.items())),
    }
    out.write(MANIFEST, _dumps(manifest))
    return manifest


def replay(manifest_path, workers, out_dir):
    """Rerun the command recorded in a manifest and check every output digest."""
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        command, doc, seed = manifest["command"], manifest["config"], manifest["seed"]
        recorded = manifest["config_sha256"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"unreadable manifest: {exc}", field="--manifest") from exc
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r} in manifest", field="command")
    if config_digest(doc) != recorded:
        raise ConfigError("config hash does not match the manifest", field="config_sha256")
    cfg = parse_config(doc, base_dir=manifest.get("config_dir", "."))
    data = manifest.get("data")
    if data is not None and _sha256_file_or_none(data["path"]) != data["sha256"]:
        raise DataError(f"input data changed since the recorded run: {data['path']}")
    fresh = run_command(command, cfg, seed, workers, out_dir or cfg.output_dir)
    differing = sorted(k for k in manifest["outputs"] if fresh["outputs"].get(k) != manifest["outputs"][k])
    if differing:
        raise CatgenError(f"replay produced different outputs: {', '.join(differing)}")
    return fresh


def _sha256_file_or_none(path):
    try:
        return _sha256_file(path)
    except OSError:
        return None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, field="argv")


def build_parser():
    parser = _Parser(prog="catgen", description="Target-population CATE curves from nested trials.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    p = sub.add_parser("replay", help="rerun a recorded run and verify its outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    return parser


def _fail(exc):
    payload = {
        "exit_code": exc.exit_code,
        "kind": exc.kind,
        "message": str(exc).replace("\n", " "),
    }
    for attr in ("field", "row", "column"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write("catgen-error " + canonical_json(payload) + "\n")
    return exc.exit_code


def main(argv=None):
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="catgen: %(levelname)s %(message)s")
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1", field="--workers")
        if args.command == "replay":
            replay(args.manifest, args.workers, args.out)
        else:
            cfg = load_config(args.config)
            seed = cfg.seed if args.seed is None else args.seed
            if seed < 0:
                raise ConfigError("--seed must be non-negative", field="--seed")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore" if not args.verbose else "default")
                run_command(args.command, cfg, seed, args.workers, args.out or cfg.output_dir)
    except CatgenError as exc:
        return _fail(exc)
    except Exception as exc:  # noqa: BLE001 - anything else is an estimation failure
        return _fail(CatgenError(f"{type(exc).__name__}: {exc}"))
    sys.stderr.write(f"catgen: wall_time_seconds={time.perf_counter() - started:.3f}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
