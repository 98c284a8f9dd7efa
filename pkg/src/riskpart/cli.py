"""Command-line entry point: ``riskpart fit | replicate | evaluate``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import cart, dsa, simulation
from .data import ColumnRoles, DataError, SurvivalDataset, load_csv, split_folds
from .estimators import PRODUCT_LIMIT, PROPORTIONAL_HAZARDS, kaplan_meier, truncate
from .loss import LossSpec, select_time_grid
from .metrics import MetricReport, concordance, pairwise_similarity, prediction_error
from .partition import AssignmentError, PartitionModel, attach_mean_times, render_table
from .selection import CensoringPolicy, cross_validate, final_fit

LOSSES = ("ipcw-l2", "brier-1fixed", "brier-5even", "brier-5km")
SEARCHES = ("dsa", "cart")
CENSORING = {"km": PRODUCT_LIMIT, "cox": PROPORTIONAL_HAZARDS}


class UsageError(Exception):
    """Invalid command-line or config input (reported as one line, exit 1)."""


# -- configuration -------------------------------------------------------

FIT_DEFAULTS = {
    "data": None, "time": "time", "event": "status", "covariates": None, "categorical": None,
    "loss": "ipcw-l2", "method": "dsa", "folds": 5, "seed": 1, "max_regions": 10, "min_clause": 15,
    "mpd": 0.05, "truncate": 0.05, "censoring": "km", "censoring_covariates": None,
    "brier_time": None, "out": "riskpart-fit",
}
REPLICATE_DEFAULTS = {
    "scenario": None, "reps": 100, "seed": 1, "jobs": 1, "methods": ",".join(simulation.METHODS),
    "n_train": 250, "n_test": 5000, "folds": 5, "max_regions": 10, "min_clause": 15, "mpd": 0.05,
    "truncate": 0.05, "out": "riskpart-replicate",
}
EVALUATE_DEFAULTS = {
    "model": None, "data": None, "time": "time", "event": "status", "true_model": None,
    "out": "riskpart-evaluate",
}
DEFAULTS = {"fit": FIT_DEFAULTS, "replicate": REPLICATE_DEFAULTS, "evaluate": EVALUATE_DEFAULTS}


def read_config(path, command: str) -> dict:
    """Flat key/value TOML; an optional ``[command]`` table overrides top-level keys."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    flat = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    flat.update(raw.get(command, {}))
    out = {}
    for k, v in flat.items():
        key = k.replace("-", "_")
        if key not in DEFAULTS[command]:
            raise UsageError(f"config file {path}: unknown key {k!r} for '{command}'")
        out[key] = v
    return out


def resolve(args: argparse.Namespace, command: str) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        cfg.update(read_config(args.config, command))
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(str(v))


def write_config(cfg: dict, path) -> None:
    lines = [f"{k} = {_toml_value(v)}" for k, v in cfg.items() if v is not None]
    Path(path).write_text("\n".join(lines) + "\n")


def _names(value) -> tuple[str, ...] | None:
    if value is None:
        return None
    if isinstance(value, str):
        return tuple(s.strip() for s in value.split(",") if s.strip())
    return tuple(value)


def _num(cfg: dict, key: str, kind=float, low=None):
    try:
        v = kind(cfg[key])
    except (TypeError, ValueError):
        raise UsageError(f"--{key.replace('_', '-')} must be a number, got {cfg[key]!r}") from None
    if low is not None and v < low:
        raise UsageError(f"--{key.replace('_', '-')} must be >= {low}, got {v}")
    return v


# -- fit -----------------------------------------------------------------

def _loss_for(name: str, data: SurvivalDataset, tau: float, brier_time) -> LossSpec:
    if name == "ipcw-l2":
        return LossSpec.ipcw_l2()
    if name == "brier-1fixed":
        if brier_time is None:
            # median of the marginal Kaplan-Meier curve
            km = kaplan_meier(data.time, data.event)
            hit = np.flatnonzero(km.values <= 0.5)
            if hit.size == 0:
                raise UsageError("Kaplan-Meier curve never reaches 0.5; pass --brier-time")
            brier_time = float(km.jump_times[hit[0]])
        return LossSpec.brier(select_time_grid(data, "one-fixed", float(brier_time)))
    if name == "brier-5even":
        return LossSpec.brier(select_time_grid(data, "five-even", tau=tau))
    return LossSpec.brier(select_time_grid(data, "five-km"))


def cmd_fit(args) -> int:
    cfg = resolve(args, "fit")
    if cfg["data"] is None:
        raise UsageError("--data is required")
    if cfg["loss"] not in LOSSES:
        raise UsageError(f"unknown loss {cfg['loss']!r}; valid losses: {', '.join(LOSSES)}")
    if cfg["method"] not in SEARCHES:
        raise UsageError(f"unknown method {cfg['method']!r}; valid methods: {', '.join(SEARCHES)}")
    if cfg["censoring"] not in CENSORING:
        raise UsageError(f"unknown censoring model {cfg['censoring']!r}; valid: {', '.join(CENSORING)}")
    categorical = {c: [] for c in (_names(cfg["categorical"]) or ())}
    roles = ColumnRoles(cfg["time"], cfg["event"], _names(cfg["covariates"]), categorical)
    raw = load_csv(cfg["data"], roles)
    raw.require_events()
    folds_v = _num(cfg, "folds", int, 2)
    seed = _num(cfg, "seed", int)
    frac = _num(cfg, "truncate", float, 0)
    if frac > 0:
        tr = truncate(raw, frac)
        data, tau = tr.dataset, tr.tau
    else:
        data, tau = raw, float(np.max(raw.time))
    kind = CENSORING[cfg["censoring"]]
    cens_covs = _names(cfg["censoring_covariates"]) or (tuple(data.names) if kind == PROPORTIONAL_HAZARDS else ())
    policy = CensoringPolicy(kind, cens_covs)
    loss = _loss_for(cfg["loss"], data, tau, cfg["brier_time"])
    max_regions = _num(cfg, "max_regions", int, 1)
    min_clause = _num(cfg, "min_clause", int, 1)
    mpd = _num(cfg, "mpd", float, 0)
    if cfg["method"] == "cart":
        ccfg = cart.CartConfig(min_node=min_clause, min_split=2 * min_clause, max_leaves=max_regions)
        fitter = lambda d, g, lo: cart.fit(d, g, lo, ccfg)  # noqa: E731
    else:
        dcfg = dsa.DsaConfig(max_regions=max_regions, min_per_clause=min_clause, min_percent_difference=mpd)
        fitter = lambda d, g, lo: dsa.fit(d, g, lo, dcfg)  # noqa: E731

    folds = split_folds(data, folds_v, seed)
    g = policy.fit(data)
    cv = cross_validate(data, fitter, loss, folds, policy, max_size=max_regions)
    model, _ = final_fit(data, cv.chosen_size, fitter, loss, g)
    model = attach_mean_times(model, data, g)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model.to_json(out / "model.json")
    (out / "risk_table.txt").write_text(render_table(model, data))
    cv.to_csv(out / "cv_curve.csv")
    _write_km_curves(model, data, out / "km_curves.csv")
    write_config(cfg, out / "config.toml")
    print(f"fitted {model.size} risk group(s); CV chose size {cv.chosen_size}; outputs in {out}")
    return 0


def _write_km_curves(model: PartitionModel, data: SurvivalDataset, path) -> None:
    groups = model.assign_all(data.x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "time", "survival"])
        for k in range(model.size):
            m = groups == k
            if not m.any():
                continue
            km = kaplan_meier(data.time[m], data.event[m])
            w.writerow([k + 1, "0.0", "1.0"])
            for t, s in zip(km.jump_times, km.values):
                w.writerow([k + 1, repr(float(t)), repr(float(s))])


# -- replicate -----------------------------------------------------------

def cmd_replicate(args) -> int:
    cfg = resolve(args, "replicate")
    if cfg["scenario"] is None:
        raise UsageError("--scenario is required (e.g. high-dep-30)")
    reps = _num(cfg, "reps", int)
    if reps < 1:
        raise UsageError(f"--reps must be >= 1, got {reps}")
    jobs = _num(cfg, "jobs", int, 1)
    try:
        scenario = simulation.parse_scenario(cfg["scenario"], n_train=_num(cfg, "n_train", int, 2),
                                             n_test=_num(cfg, "n_test", int, 2), replicates=reps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    config = simulation.StudyConfig(
        folds=_num(cfg, "folds", int, 2), truncate=_num(cfg, "truncate", float, 0),
        dsa=dsa.DsaConfig(max_regions=_num(cfg, "max_regions", int, 1),
                          min_per_clause=_num(cfg, "min_clause", int, 1),
                          min_percent_difference=_num(cfg, "mpd", float, 0)),
        cart=cart.CartConfig(min_node=_num(cfg, "min_clause", int, 1),
                             min_split=2 * _num(cfg, "min_clause", int, 1),
                             max_leaves=_num(cfg, "max_regions", int, 1)))
    methods = _names(cfg["methods"])
    try:
        report = simulation.run_study(scenario, methods, cfg["out"], reps, _num(cfg, "seed", int), jobs, config)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_config(cfg, Path(cfg["out"]) / "config.toml")
    failed = sum(r["status"] != "ok" for r in report.rows)
    print(f"{scenario.name}: {reps} replicate(s), {len(methods)} method(s), {failed} failed fit(s); "
          f"outputs in {cfg['out']}")
    return 0


# -- evaluate ------------------------------------------------------------

def _load_model(path) -> PartitionModel:
    try:
        return PartitionModel.from_json(Path(path))
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"model file {path} is malformed: {exc}") from None


def _check_schema(model: PartitionModel, path) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    for cov in model.schema:
        if cov.name not in header:
            raise UsageError(f"test data {path} lacks model covariate column {cov.name!r}")


def cmd_evaluate(args) -> int:
    cfg = resolve(args, "evaluate")
    if cfg["model"] is None or cfg["data"] is None:
        raise UsageError("--model and --data are required")
    model = _load_model(cfg["model"])
    if not Path(cfg["data"]).is_file():
        raise UsageError(f"data file not found: {cfg['data']}")
    _check_schema(model, cfg["data"])
    cat = {c.name: list(c.levels) for c in model.schema if c.is_categorical}
    test = load_csv(cfg["data"], ColumnRoles(cfg["time"], cfg["event"], tuple(c.name for c in model.schema), cat))
    for mine, theirs in zip(model.schema, test.schema):
        if mine.kind != theirs.kind:
            raise UsageError(f"column {mine.name!r} is {theirs.kind} in the test data but {mine.kind} in the model")
    if any(r.mean_time is None for r in model.regions):
        raise UsageError("model has no per-region mean times; refit it with 'riskpart fit'")

    pred = np.array([r.mean_time for r in model.regions])[model.assign_all(test.x)]
    notes = []
    try:
        c_p, c_bar = concordance(test.time, pred)
    except ValueError as exc:
        c_p = c_bar = float("nan")
        notes.append(f"c-index: {exc}")
    report = MetricReport(model.size, c_p, c_bar, variables_used={v: 1 for v in model.variables_used()})
    if cfg["true_model"]:
        truth = _load_model(cfg["true_model"])
        if [c.name for c in truth.schema] != [c.name for c in model.schema]:
            raise UsageError("true model and model have different covariate schemas")
        report.l_p = prediction_error(truth, model, test)
        report.d_p = pairwise_similarity(truth, model, test)
    if np.any(~test.event):
        notes.append(f"{int(np.sum(~test.event))} censored test subject(s) scored by follow-up time")

    row = report.as_row()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(row))
        w.writerow([_fmt_cell(v) for v in row.values()])
    write_config(cfg, out / "config.toml")
    width = max(len(k) for k in row)
    for k, v in row.items():
        print(f"{k:<{width}}  {_fmt_cell(v)}")
    for n in notes:
        print(f"note: {n}", file=sys.stderr)
    return 0


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskpart", description="Censoring-aware risk-stratification partitions.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file whose keys mirror the flag names")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    f = sub.add_parser("fit", help="fit a partition to a CSV dataset")
    common(f)
    f.add_argument("--data")
    f.add_argument("--time")
    f.add_argument("--event")
    f.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    f.add_argument("--categorical", help="comma-separated columns to treat as unordered")
    f.add_argument("--loss", help=f"one of {', '.join(LOSSES)}")
    f.add_argument("--method", help="dsa (default) or cart")
    f.add_argument("--folds", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--max-regions", dest="max_regions", type=int)
    f.add_argument("--min-clause", dest="min_clause", type=int)
    f.add_argument("--mpd", type=float)
    f.add_argument("--truncate", type=float, help="fraction of times above the truncation point (0 disables)")
    f.add_argument("--censoring", help="km or cox")
    f.add_argument("--censoring-covariates", dest="censoring_covariates")
    f.add_argument("--brier-time", dest="brier_time", type=float)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("replicate", help="run a simulation study")
    common(r)
    r.add_argument("--scenario", help="e.g. high-dep-30, low-indep-0")
    r.add_argument("--reps", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--methods", help=f"comma-separated subset of {','.join(simulation.METHODS)}")
    r.add_argument("--n-train", dest="n_train", type=int)
    r.add_argument("--n-test", dest="n_test", type=int)
    r.add_argument("--folds", type=int)
    r.add_argument("--max-regions", dest="max_regions", type=int)
    r.add_argument("--min-clause", dest="min_clause", type=int)
    r.add_argument("--mpd", type=float)
    r.add_argument("--truncate", type=float)
    r.set_defaults(func=cmd_replicate)

    e = sub.add_parser("evaluate", help="score a saved model on test data")
    common(e)
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--time")
    e.add_argument("--event")
    e.add_argument("--true-model", dest="true_model")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DataError, AssignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
